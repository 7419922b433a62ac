/**
 * Review session state machine, kept DOM-free so the decision protocol is
 * testable against a real or mocked service.
 *
 * Invariants:
 *  - a decision always carries the version the item was served with;
 *  - a decided item is never shown as pending (we advance or refresh);
 *  - a version conflict refreshes the item and surfaces a notice, never
 *    auto-retries with the new version.
 */
import {
  InvalidTransitionError,
  ReviewApiClient,
  VersionConflictError,
} from './api';
import { decodeRle } from './rle';
import type { Category, DecisionAction, Progress, ReviewItem } from './types';

export type Phase = 'idle' | 'loading' | 'reviewing' | 'submitting' | 'done' | 'error';

export interface ViewState {
  phase: Phase;
  item: ReviewItem | null;
  /** decoded mask for the current item; null when decoding failed */
  mask: Uint8Array | null;
  maskError: string | null;
  remaining: number;
  decidedThisSession: number;
  notice: string | null;
  error: string | null;
  categoryFilter: Category | null;
  overlayOpacity: number;
}

export type Listener = (state: ViewState) => void;

export class ReviewController {
  private state: ViewState = {
    phase: 'idle',
    item: null,
    mask: null,
    maskError: null,
    remaining: 0,
    decidedThisSession: 0,
    notice: null,
    error: null,
    categoryFilter: null,
    overlayOpacity: 0.6,
  };

  private listeners: Listener[] = [];

  constructor(
    private readonly api: ReviewApiClient,
    private readonly reviewerId: string,
  ) {}

  getState(): ViewState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    listener(this.state);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  private serveItem(item: ReviewItem | null, remaining: number): void {
    if (item === null) {
      this.update({ phase: 'done', item: null, mask: null, maskError: null, remaining: 0 });
      return;
    }
    let mask: Uint8Array | null = null;
    let maskError: string | null = null;
    try {
      mask = decodeRle(item.mask);
    } catch (err) {
      // malformed payload: keep the item reviewable, show an error chip
      maskError = `mask decode failed: ${(err as Error).message}`;
      console.error(maskError, item.sample_id);
    }
    this.update({ phase: 'reviewing', item, mask, maskError, remaining });
  }

  async loadNext(): Promise<void> {
    this.update({ phase: 'loading', error: null });
    try {
      const next = await this.api.fetchNext(this.state.categoryFilter, this.reviewerId);
      this.serveItem(next.item, next.remaining);
    } catch (err) {
      // network failure: keep state, show retry banner
      this.update({ phase: 'error', error: (err as Error).message });
    }
  }

  async setCategoryFilter(category: Category | null): Promise<void> {
    this.update({ categoryFilter: category });
    await this.loadNext();
  }

  setOverlayOpacity(opacity: number): void {
    this.update({ overlayOpacity: Math.min(1, Math.max(0, opacity)) });
  }

  async decide(action: DecisionAction, newCategory?: Category): Promise<void> {
    const item = this.state.item;
    if (this.state.phase !== 'reviewing' || item === null) {
      return; // nothing loaded, or a submission is already in flight
    }
    this.update({ phase: 'submitting', notice: null });
    try {
      await this.api.submitDecision({
        sample_id: item.sample_id,
        action,
        ...(action === 'recategorize' ? { new_category: newCategory } : {}),
        reviewer_id: this.reviewerId,
        expected_version: item.version, // always the version we were served
      });
      this.update({ decidedThisSession: this.state.decidedThisSession + 1 });
      await this.loadNext();
    } catch (err) {
      if (err instanceof VersionConflictError) {
        // surface the conflict with the refreshed item; never blind-retry
        const refreshed = err.currentItem;
        const notice =
          `another reviewer touched ${item.sample_id} ` +
          `(now ${refreshed.status}, v${refreshed.version})`;
        if (refreshed.status === 'pending') {
          this.serveItem(refreshed, this.state.remaining);
          this.update({ notice });
        } else {
          // decided elsewhere: never render it as reviewable again
          this.update({ notice });
          await this.loadNext();
        }
      } else if (err instanceof InvalidTransitionError) {
        this.update({ notice: `${item.sample_id} was already decided elsewhere` });
        await this.loadNext();
      } else {
        this.update({ phase: 'error', error: (err as Error).message });
      }
    }
  }

  async progress(): Promise<Progress> {
    return this.api.fetchProgress();
  }
}
