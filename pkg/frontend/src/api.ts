/**
 * Typed client for the review service API.
 *
 * Version conflicts are first-class: the server answers 409 with the
 * current item, and we surface that as VersionConflictError so the UI can
 * refresh instead of silently retrying with a new version.
 */
import type { Decision, NextResponse, Progress, ReviewItem } from './types';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status: number, readonly code: string) {
    super(message);
    this.name = 'ApiError';
  }
}

export class VersionConflictError extends ApiError {
  constructor(message: string, readonly currentItem: ReviewItem) {
    super(message, 409, 'version_conflict');
    this.name = 'VersionConflictError';
  }
}

export class InvalidTransitionError extends ApiError {
  constructor(message: string) {
    super(message, 409, 'invalid_transition');
    this.name = 'InvalidTransitionError';
  }
}

interface ErrorBody {
  error?: { code?: string; message?: string };
  item?: ReviewItem;
}

export class ReviewApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async fetchNext(category?: string | null, reviewer?: string): Promise<NextResponse> {
    const params = new URLSearchParams();
    if (category) params.set('category', category);
    if (reviewer) params.set('reviewer', reviewer);
    const query = params.toString();
    const resp = await this.fetchFn(
      `${this.baseUrl}/review/next${query ? `?${query}` : ''}`,
    );
    if (!resp.ok) {
      throw await this.asError(resp);
    }
    return (await resp.json()) as NextResponse;
  }

  async submitDecision(decision: Decision): Promise<ReviewItem> {
    const resp = await this.fetchFn(`${this.baseUrl}/review/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(decision),
    });
    if (!resp.ok) {
      throw await this.asError(resp);
    }
    const body = (await resp.json()) as { item: ReviewItem };
    return body.item;
  }

  async fetchProgress(): Promise<Progress> {
    const resp = await this.fetchFn(`${this.baseUrl}/review/progress`);
    if (!resp.ok) {
      throw await this.asError(resp);
    }
    return (await resp.json()) as Progress;
  }

  private async asError(resp: Response): Promise<ApiError> {
    let body: ErrorBody = {};
    try {
      body = (await resp.json()) as ErrorBody;
    } catch {
      // non-JSON error body; fall through with generic info
    }
    const code = body.error?.code ?? `http_${resp.status}`;
    const message = body.error?.message ?? `HTTP ${resp.status}`;
    if (code === 'version_conflict' && body.item) {
      return new VersionConflictError(message, body.item);
    }
    if (code === 'invalid_transition') {
      return new InvalidTransitionError(message);
    }
    return new ApiError(message, resp.status, code);
  }
}
