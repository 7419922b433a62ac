/**
 * Wire types mirroring the review service JSON.
 */

export interface RleMask {
  /** [height, width] */
  size: [number, number];
  /** column-major run lengths, first run counts zeros */
  counts: number[];
}

export interface ImageRef {
  image_id: string;
  uri: string;
  width: number;
  height: number;
}

export type Category = 'stuff' | 'part' | 'multi' | 'single';
export const CATEGORIES: Category[] = ['stuff', 'part', 'multi', 'single'];

export type ItemStatus = 'pending' | 'accepted' | 'rejected' | 'recategorized';

export interface ReviewItem {
  sample_id: string;
  image: ImageRef;
  referring_text: string;
  mask: RleMask;
  proposed_category: Category;
  category: Category;
  status: ItemStatus;
  reviewer_id: string | null;
  decided_at: string | null;
  version: number;
}

export type DecisionAction = 'accept' | 'reject' | 'recategorize';

export interface Decision {
  sample_id: string;
  action: DecisionAction;
  new_category?: Category;
  reviewer_id: string;
  expected_version: number;
}

export interface NextResponse {
  item: ReviewItem | null;
  remaining: number;
}

export interface StatusCounts {
  pending: number;
  accepted: number;
  rejected: number;
  recategorized: number;
}

export interface Progress {
  name: string;
  quotas: Record<Category, number>;
  categories: Record<Category, StatusCounts>;
  pending: number;
  decided: number;
}
