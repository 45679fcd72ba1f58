/** Paginated image grid; selecting a thumbnail opens the detail view. */

import type { ApiClient, ImageInfo } from "./api.js";

export const PAGE_SIZE = 20;

export function pageCount(total: number, pageSize: number = PAGE_SIZE): number {
  return total === 0 ? 0 : Math.ceil(total / pageSize);
}

export interface GalleryCallbacks {
  onSelect: (imageId: string) => void;
  onPage: (page: number) => void;
}

export function renderGallery(
  container: HTMLElement,
  api: ApiClient,
  images: ImageInfo[],
  total: number,
  page: number,
  callbacks: GalleryCallbacks,
): void {
  container.replaceChildren();
  if (total === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No images served. Point the service at a dataset directory.";
    container.appendChild(empty);
    return;
  }

  const grid = document.createElement("div");
  grid.className = "gallery-grid";
  for (const image of images) {
    const card = document.createElement("button");
    card.className = "thumb";
    card.dataset.imageId = image.id;
    card.addEventListener("click", () => callbacks.onSelect(image.id));

    const img = document.createElement("img");
    img.src = api.imageUrl(image.id);
    img.alt = image.id;
    img.loading = "lazy";

    const label = document.createElement("span");
    label.className = `label label-${image.label}`;
    label.textContent = image.label;

    card.append(img, label);
    grid.appendChild(card);
  }
  container.appendChild(grid);

  const pages = pageCount(total);
  const nav = document.createElement("nav");
  nav.className = "pager";
  for (let p = 0; p < pages; p++) {
    const btn = document.createElement("button");
    btn.textContent = String(p + 1);
    btn.disabled = p === page;
    btn.addEventListener("click", () => callbacks.onPage(p));
    nav.appendChild(btn);
  }
  container.appendChild(nav);
}
