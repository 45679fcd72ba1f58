/** Display formatting: rounded text for the cell, raw value in the tooltip. */

export function numberCell(element: HTMLElement, value: number, digits = 3): void {
  element.textContent = value.toFixed(digits);
  element.title = String(value);
}

export function probabilityText(value: number): string {
  return `${(value * 100).toFixed(1)}%`;
}
