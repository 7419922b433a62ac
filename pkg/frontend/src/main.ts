/**
 * DOM wiring for the review tool. All protocol logic lives in the
 * controller; this file only renders state and forwards events.
 *
 * The API base defaults to the page origin and can be overridden with
 * ?api=http://host:port when the service runs elsewhere.
 */
import { ReviewApiClient } from './api';
import { ReviewController, ViewState } from './controller';
import { bindKeys } from './keyboard';
import { drawMaskOverlay } from './rle';
import { CATEGORIES, Category, Progress } from './types';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get('api');
  return (override ?? window.location.origin).replace(/\/$/, '');
}

function reviewerId(): string {
  let id = window.localStorage.getItem('gf_reviewer');
  if (!id) {
    id = window.prompt('Reviewer id:')?.trim() || `reviewer-${Date.now() % 10000}`;
    window.localStorage.setItem('gf_reviewer', id);
  }
  return id;
}

function renderProgress(node: HTMLElement, progress: Progress): void {
  const rows = CATEGORIES.map((cat) => {
    const counts = progress.categories[cat];
    const quota = progress.quotas[cat] ?? 0;
    const accepted = counts.accepted + counts.recategorized;
    const done = quota > 0 && accepted >= quota;
    return (
      `<tr class="${done ? 'quota-met' : ''}">` +
      `<td>${cat}</td><td>${accepted}${quota ? `/${quota}` : ''}</td>` +
      `<td>${counts.rejected}</td><td>${counts.pending}</td></tr>`
    );
  }).join('');
  node.innerHTML =
    '<table><thead><tr><th>category</th><th>accepted</th><th>rejected</th>' +
    `<th>pending</th></tr></thead><tbody>${rows}</tbody></table>`;
}

function main(): void {
  const api = new ReviewApiClient(apiBase());
  const controller = new ReviewController(api, reviewerId());

  const stage = el<HTMLDivElement>('stage');
  const image = el<HTMLImageElement>('image');
  const overlay = el<HTMLCanvasElement>('overlay');
  const text = el<HTMLParagraphElement>('referring-text');
  const meta = el<HTMLParagraphElement>('meta');
  const notice = el<HTMLDivElement>('notice');
  const errorBanner = el<HTMLDivElement>('error');
  const chip = el<HTMLSpanElement>('mask-chip');
  const doneScreen = el<HTMLDivElement>('done');
  const progressPanel = el<HTMLDivElement>('progress');
  const opacity = el<HTMLInputElement>('opacity');
  const filter = el<HTMLSelectElement>('filter');

  const refreshProgress = () => {
    controller
      .progress()
      .then((p) => renderProgress(progressPanel, p))
      .catch(() => undefined);
  };

  controller.subscribe((state: ViewState) => {
    errorBanner.hidden = state.phase !== 'error';
    if (state.phase === 'error') {
      errorBanner.textContent = `service unreachable: ${state.error} — press Retry`;
    }
    notice.hidden = !state.notice;
    notice.textContent = state.notice ?? '';
    doneScreen.hidden = state.phase !== 'done';
    stage.hidden = state.phase === 'done' || state.phase === 'error';

    overlay.style.opacity = String(state.overlayOpacity);

    const item = state.item;
    if (!item) {
      return;
    }
    meta.textContent =
      `${item.sample_id} · proposed ${item.category} · v${item.version} · ` +
      `${state.remaining} remaining`;
    text.textContent = item.referring_text;

    image.width = item.image.width;
    image.height = item.image.height;
    image.src = item.image.uri || placeholder(item.image.width, item.image.height);

    chip.hidden = state.maskError === null;
    chip.textContent = state.maskError ?? '';
    if (state.mask !== null) {
      drawMaskOverlay(overlay, item.mask);
    } else {
      overlay.width = item.image.width;
      overlay.height = item.image.height;
    }
    refreshProgress();
  });

  opacity.addEventListener('input', () => {
    controller.setOverlayOpacity(Number(opacity.value) / 100);
  });
  filter.addEventListener('change', () => {
    const value = filter.value as Category | '';
    void controller.setCategoryFilter(value === '' ? null : value);
  });
  el<HTMLButtonElement>('retry').addEventListener('click', () => {
    void controller.loadNext();
  });
  for (const action of ['accept', 'reject'] as const) {
    el<HTMLButtonElement>(`btn-${action}`).addEventListener('click', () => {
      void controller.decide(action);
    });
  }

  bindKeys(controller, window);
  refreshProgress();
  void controller.loadNext();
}

/** Checkerboard stand-in for images the browser cannot reach (stub data). */
function placeholder(width: number, height: number): string {
  const canvas = document.createElement('canvas');
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext('2d');
  if (ctx) {
    const tile = Math.max(4, Math.floor(Math.min(width, height) / 8));
    for (let y = 0; y < height; y += tile) {
      for (let x = 0; x < width; x += tile) {
        ctx.fillStyle = ((x + y) / tile) % 2 ? '#d8dee9' : '#eceff4';
        ctx.fillRect(x, y, tile, tile);
      }
    }
  }
  return canvas.toDataURL();
}

document.addEventListener('DOMContentLoaded', main);
