/** Structured errors mirroring the core library's error names. */

export class PosekitError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PosekitError";
  }
}

export class SessionClosedError extends PosekitError {
  constructor() {
    super("session is closed");
    this.name = "SessionClosedError";
  }
}

export class VersionMismatchError extends PosekitError {
  constructor(binding: string, core: string) {
    super(`binding version ${binding} does not match core ${core}`);
    this.name = "VersionMismatchError";
  }
}

export class SchemaError extends PosekitError {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

export class FittingError extends PosekitError {
  constructor(message: string) {
    super(message);
    this.name = "FittingError";
  }
}

export class TokenStreamError extends PosekitError {
  constructor(message: string) {
    super(message);
    this.name = "TokenStreamError";
  }
}

export class UnknownViewError extends PosekitError {
  constructor(message: string) {
    super(message);
    this.name = "UnknownViewError";
  }
}

export class NonDivisibleShapeError extends PosekitError {
  constructor(message: string) {
    super(message);
    this.name = "NonDivisibleShapeError";
  }
}

/** Map a CLI exit code and stderr to the matching structured error. */
export function errorFromExit(code: number, stderr: string): PosekitError {
  const message = stderr.trim() || `posekit exited with code ${code}`;
  switch (code) {
    case 2:
      return new SchemaError(message);
    case 3:
      return new FittingError(message);
    case 4:
      return new TokenStreamError(message);
    case 5:
      return new UnknownViewError(message);
    case 6:
      return new NonDivisibleShapeError(message);
    default:
      return new PosekitError(message);
  }
}
