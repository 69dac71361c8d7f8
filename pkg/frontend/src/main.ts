/** Browser entry point: wires the review session to the DOM. */

import { ApiClient } from './api.js';
import { agreementCells, orderForRater } from './agreement.js';
import { actionForKey } from './keyboard.js';
import { ReviewSession } from './session.js';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function levelButtons(): HTMLButtonElement[] {
  return [0, 1, 2, 3].map((l) => $(`level-${l}`) as HTMLButtonElement);
}

async function refreshAgreement(api: ApiClient, rater: string): Promise<void> {
  const table = $('agreement-body');
  const { results } = await api.agreement();
  table.innerHTML = '';
  for (const row of orderForRater(results, rater)) {
    const cells = agreementCells(row);
    const tr = document.createElement('tr');
    for (const value of [cells.pair, cells.n, cells.pearson, cells.spearman, cells.status]) {
      const td = document.createElement('td');
      td.textContent = value;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
}

function renderItem(session: ReviewSession): void {
  const item = session.current;
  const status = $('status');
  const doneBadge = $('done-banner');
  if (!item) {
    doneBadge.hidden = false;
    $('question').textContent = '';
    $('prediction').textContent = '';
    $('answer').textContent = '';
    ($('image') as HTMLImageElement).removeAttribute('src');
    ($('audio') as HTMLAudioElement).removeAttribute('src');
    status.textContent = 'All items reviewed.';
    return;
  }
  doneBadge.hidden = true;
  $('question').textContent = item.sample.question;
  $('prediction').textContent = item.prediction;
  $('answer').textContent = item.sample.answer;
  const image = $('image') as HTMLImageElement;
  const audio = $('audio') as HTMLAudioElement;
  let mediaPending = (item.sample.image_url ? 1 : 0) + (item.sample.audio_url ? 1 : 0);

  // rubric controls stay disabled until the item is fully on screen
  setControlsEnabled(false);
  const armed = () => {
    mediaPending -= 1;
    if (mediaPending <= 0) {
      session.markDisplayed();
      setControlsEnabled(true);
    }
  };
  if (item.sample.image_url) {
    image.onload = armed;
    image.onerror = armed;
    image.src = item.sample.image_url;
  } else {
    image.removeAttribute('src');
  }
  if (item.sample.audio_url) {
    audio.onloadeddata = armed;
    audio.onerror = armed;
    audio.src = item.sample.audio_url;
  } else {
    audio.removeAttribute('src');
  }
  if (mediaPending === 0) {
    session.markDisplayed();
    setControlsEnabled(true);
  }
  status.textContent = `item ${session.position + 1} of ${session.total}`;
}

function setControlsEnabled(enabled: boolean): void {
  for (const button of levelButtons()) button.disabled = !enabled;
  ($('structure-pass') as HTMLButtonElement).disabled = !enabled;
  ($('structure-fail') as HTMLButtonElement).disabled = !enabled;
  ($('submit') as HTMLButtonElement).disabled = !enabled;
}

function renderDraft(session: ReviewSession): void {
  const draft = session.currentDraft;
  for (const [i, button] of levelButtons().entries()) {
    button.classList.toggle('selected', draft.level === i);
  }
  $('structure-pass').classList.toggle('selected', draft.structureOk === true);
  $('structure-fail').classList.toggle('selected', draft.structureOk === false);
  ($('submit') as HTMLButtonElement).disabled = !session.canSubmit();
}

function showError(message: string | null): void {
  const box = $('error');
  box.hidden = !message;
  box.textContent = message ?? '';
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const rater = params.get('rater') ?? window.prompt('Rater handle?') ?? 'anonymous';
  $('rater').textContent = rater;

  const api = new ApiClient('');
  const session = new ReviewSession(api, rater);
  await session.load();

  const progress = async () => {
    const p = await api.progress(rater);
    $('progress').textContent =
      `${p.completed}/${p.total} reviewed` +
      (session.pendingOffline.length ? ` (${session.pendingOffline.length / 2} queued offline)` : '');
  };

  const repaint = async () => {
    renderItem(session);
    renderDraft(session);
    await progress();
    await refreshAgreement(api, rater).catch(() => undefined);
  };

  const submit = async () => {
    const outcome = await session.submit();
    if (outcome.status === 'rejected') {
      showError(`${outcome.code}: ${outcome.message}`);
    } else {
      showError(null);
    }
    await repaint();
  };

  $('submit').addEventListener('click', submit);
  $('revise').addEventListener('click', async () => {
    session.reviseLast();
    await repaint();
  });
  $('structure-pass').addEventListener('click', () => {
    session.setStructure(true);
    renderDraft(session);
  });
  $('structure-fail').addEventListener('click', () => {
    session.setStructure(false);
    renderDraft(session);
  });
  for (const [i, button] of levelButtons().entries()) {
    button.addEventListener('click', () => {
      session.setLevel(i as 0 | 1 | 2 | 3);
      renderDraft(session);
    });
  }
  ($('rationale') as HTMLTextAreaElement).addEventListener('input', (event) => {
    session.setRationale((event.target as HTMLTextAreaElement).value);
  });

  document.addEventListener('keydown', async (event) => {
    if ((event.target as HTMLElement)?.tagName === 'TEXTAREA') return;
    const action = actionForKey(event.key);
    if (!action) return;
    event.preventDefault();
    if (action.kind === 'level') session.setLevel(action.level);
    if (action.kind === 'structure') session.setStructure(action.ok);
    if (action.kind === 'submit' && session.canSubmit()) await submit();
    if (action.kind === 'revise') session.reviseLast();
    await repaint();
  });

  window.addEventListener('online', async () => {
    const flushed = await session.flushOffline();
    if (flushed > 0) await repaint();
  });

  await repaint();
}

start().catch((err) => showError(String(err)));
