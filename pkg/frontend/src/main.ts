/** DOM wiring for the what-if explorer. */

import { ApiFailure, Client, SingleFlight } from "./api.js";
import { emptyState, renderChart } from "./chart.js";
import {
  canSubmit,
  defaultForm,
  formErrors,
  plannedCarbsVisible,
  QueryFormState,
  SessionLog,
  TAU_VALUES,
  viewAfterResponse,
  ViewState,
} from "./state.js";
import type { ModelInfo, RecommendRequest, ScenarioName } from "./types.js";

const apiBase =
  new URLSearchParams(location.search).get("api") ??
  (window as { GLUCOREC_API?: string }).GLUCOREC_API ??
  "";
const client = new Client(apiBase);
const flight = new SingleFlight();
const log = new SessionLog();
const form: QueryFormState = defaultForm();
let view: ViewState = { kind: "idle" };
let models: ModelInfo[] = [];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function renderSubjectOptions(): void {
  const subjects = [...new Set(models.map((m) => m.subject_id))].sort();
  const select = el<HTMLSelectElement>("subject");
  select.innerHTML = subjects
    .map((s) => `<option value="${s}">${s}</option>`)
    .join("");
  if (!form.subject && subjects.length) {
    form.subject = subjects[0];
  }
  select.value = form.subject;
}

function scenariosForSubject(): ScenarioName[] {
  return [
    ...new Set(
      models
        .filter((m) => m.subject_id === form.subject)
        .map((m) => m.scenario),
    ),
  ].sort() as ScenarioName[];
}

function renderScenarioOptions(): void {
  const names = scenariosForSubject();
  const select = el<HTMLSelectElement>("scenario");
  select.innerHTML = names
    .map((s) => `<option value="${s}">${s}</option>`)
    .join("");
  if (names.length && !names.includes(form.scenario)) {
    form.scenario = names[0];
  }
  select.value = form.scenario;
}

function renderForm(): void {
  el<HTMLSpanElement>("target-value").textContent = `${form.targetBgl} mg/dL`;
  el<HTMLDivElement>("planned-row").style.display = plannedCarbsVisible(form)
    ? ""
    : "none";
  const errors = formErrors(form);
  el<HTMLUListElement>("form-errors").innerHTML = errors
    .map((e) => `<li>${e}</li>`)
    .join("");
  el<HTMLButtonElement>("submit").disabled =
    errors.length > 0 || flight.inFlight;
}

function renderView(): void {
  const panel = el<HTMLDivElement>("result");
  switch (view.kind) {
    case "idle":
      panel.innerHTML = `<p class="muted">Submit a query to see a recommendation.</p>`;
      break;
    case "loading":
      panel.innerHTML = `<p class="muted">Asking the model...</p>`;
      break;
    case "field-error":
      panel.innerHTML = `<p class="error">Request rejected: ${view.detail}</p>`;
      break;
    case "network-error":
      panel.innerHTML =
        `<div class="banner">Could not reach the service (${view.detail}). ` +
        `<button id="retry">Retry</button></div>`;
      document.getElementById("retry")?.addEventListener("click", submit);
      break;
    case "result": {
      const r = view.response;
      const badge = r.clamped
        ? `<span class="badge warn" title="raw model output was negative">clamped</span>`
        : "";
      const blocks = r.per_block_forecasts
        ? `<p class="muted">per-block: ${r.per_block_forecasts
            .map((b) => b.toFixed(2))
            .join(" + ")} ${r.unit}</p>`
        : "";
      panel.innerHTML =
        `<p class="headline">${r.display} ${badge}</p>` +
        `<p class="muted">${r.model.architecture} checkpoint ` +
        `${r.model.checkpoint_id} (seed ${r.model.seed})</p>` +
        blocks;
      break;
    }
  }
  el<HTMLOListElement>("history-log").innerHTML = log
    .list()
    .map(
      (entry) =>
        `<li>${entry.form.scenario} tau=${entry.form.tau} ` +
        `target=${entry.form.targetBgl} &rarr; ${entry.response.display}</li>`,
    )
    .join("");
}

async function loadChart(): Promise<void> {
  const holder = el<HTMLDivElement>("chart");
  if (!form.subject) {
    holder.innerHTML = emptyState("no subject selected");
    return;
  }
  try {
    const window = await client.latestHistory(form.subject);
    holder.innerHTML = renderChart(window);
  } catch (err) {
    const detail = err instanceof ApiFailure ? err.detail : String(err);
    holder.innerHTML = emptyState(`no history available (${detail})`);
  }
}

function buildRequest(): RecommendRequest {
  const request: RecommendRequest = {
    subject_id: form.subject,
    scenario: form.scenario,
    architecture: form.architecture,
    target_bgl: form.targetBgl,
    tau: form.tau,
  };
  if (plannedCarbsVisible(form) && form.plannedCarbs !== null) {
    request.planned_carbs = form.plannedCarbs;
  }
  return request;
}

async function submit(): Promise<void> {
  if (!canSubmit(form)) {
    return;
  }
  view = { kind: "loading" };
  renderForm();
  renderView();
  const snapshot: QueryFormState = { ...form };
  const result = await flight
    .submit(() => client.recommend(buildRequest()))
    .then(
      (response) =>
        response === null
          ? null
          : ({ ok: true, response } as const),
      (err) =>
        ({
          ok: false,
          status: err instanceof ApiFailure ? err.status : null,
          detail: err instanceof ApiFailure ? err.detail : String(err),
        }) as const,
    );
  if (result === null) {
    return; // displaced by a newer submission
  }
  view = viewAfterResponse(result);
  if (result.ok) {
    log.add(snapshot, result.response, Date.now());
  }
  renderForm();
  renderView();
}

function wire(): void {
  const tauSelect = el<HTMLSelectElement>("tau");
  tauSelect.innerHTML = TAU_VALUES.map(
    (t) => `<option value="${t}">${t} min</option>`,
  ).join("");
  tauSelect.value = String(form.tau);

  el<HTMLSelectElement>("subject").addEventListener("change", (e) => {
    form.subject = (e.target as HTMLSelectElement).value;
    renderScenarioOptions();
    renderForm();
    void loadChart();
  });
  el<HTMLSelectElement>("scenario").addEventListener("change", (e) => {
    form.scenario = (e.target as HTMLSelectElement).value as ScenarioName;
    renderForm();
  });
  el<HTMLSelectElement>("architecture").addEventListener("change", (e) => {
    form.architecture = (e.target as HTMLSelectElement).value as
      | "lstm"
      | "nbeats";
    renderForm();
  });
  el<HTMLInputElement>("target").addEventListener("input", (e) => {
    form.targetBgl = Number((e.target as HTMLInputElement).value);
    renderForm();
  });
  tauSelect.addEventListener("change", (e) => {
    form.tau = Number((e.target as HTMLSelectElement).value);
    renderForm();
  });
  el<HTMLInputElement>("planned").addEventListener("input", (e) => {
    const raw = (e.target as HTMLInputElement).value;
    form.plannedCarbs = raw === "" ? null : Number(raw);
    renderForm();
  });
  el<HTMLButtonElement>("submit").addEventListener("click", () => {
    void submit();
  });
}

async function boot(): Promise<void> {
  wire();
  renderForm();
  renderView();
  try {
    models = await client.models();
  } catch (err) {
    view = {
      kind: "network-error",
      detail: err instanceof ApiFailure ? err.detail : String(err),
    };
    renderView();
    return;
  }
  renderSubjectOptions();
  renderScenarioOptions();
  renderForm();
  await loadChart();
}

void boot();
