/** Keyboard shortcuts: 0-3 pick a reasoning level, p/f the structure
 * verdict, Enter submits, r revises the previous item. */

export type KeyAction =
  | { kind: 'level'; level: 0 | 1 | 2 | 3 }
  | { kind: 'structure'; ok: boolean }
  | { kind: 'submit' }
  | { kind: 'revise' };

export function actionForKey(key: string): KeyAction | null {
  switch (key) {
    case '0':
    case '1':
    case '2':
    case '3':
      return { kind: 'level', level: Number(key) as 0 | 1 | 2 | 3 };
    case 'p':
    case 'P':
      return { kind: 'structure', ok: true };
    case 'f':
    case 'F':
      return { kind: 'structure', ok: false };
    case 'Enter':
      return { kind: 'submit' };
    case 'r':
    case 'R':
      return { kind: 'revise' };
    default:
      return null;
  }
}
