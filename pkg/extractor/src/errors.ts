/** Error taxonomy shared by every extractor module. */

/** Input data violates a contract (bad annotations, bad class list, bad box). */
export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

/** A file is not in the expected binary layout. */
export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

/** The requested backbone or encoder cannot run in this environment. */
export class EnvironmentError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "EnvironmentError";
  }
}
