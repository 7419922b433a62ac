/**
 * Keyboard-first review workflow:
 *   a       accept
 *   r       reject
 *   1..4    recategorize to stuff / part / multi / single
 *
 * Keys are ignored while typing in form fields.
 */
import type { ReviewController } from './controller';
import { CATEGORIES } from './types';

export interface KeyEventLike {
  key: string;
  target?: unknown;
  preventDefault(): void;
}

const IGNORED_TAGS = new Set(['INPUT', 'TEXTAREA', 'SELECT']);

function isTypingTarget(target: unknown): boolean {
  const el = target as { tagName?: string; isContentEditable?: boolean } | null;
  if (!el || !el.tagName) {
    return false;
  }
  return IGNORED_TAGS.has(el.tagName) || el.isContentEditable === true;
}

/** Route one key event into the controller; returns true when handled. */
export function handleKey(controller: ReviewController, event: KeyEventLike): boolean {
  if (isTypingTarget(event.target)) {
    return false;
  }
  const key = event.key.toLowerCase();
  if (key === 'a') {
    event.preventDefault();
    void controller.decide('accept');
    return true;
  }
  if (key === 'r') {
    event.preventDefault();
    void controller.decide('reject');
    return true;
  }
  const slot = Number.parseInt(key, 10);
  if (slot >= 1 && slot <= 4) {
    event.preventDefault();
    void controller.decide('recategorize', CATEGORIES[slot - 1]);
    return true;
  }
  return false;
}

export interface KeyTarget {
  addEventListener(type: 'keydown', handler: (event: KeyEventLike) => void): void;
  removeEventListener(type: 'keydown', handler: (event: KeyEventLike) => void): void;
}

export function bindKeys(controller: ReviewController, target: KeyTarget): () => void {
  const handler = (event: KeyEventLike) => {
    handleKey(controller, event);
  };
  target.addEventListener('keydown', handler);
  return () => target.removeEventListener('keydown', handler);
}
