/** Form state, validation, and the session-local query log.
 *
 * All recommendation math happens server-side; this module only decides
 * whether a query is allowed to leave the browser and records what came
 * back.
 */

import type {
  ArchitectureName,
  RecommendResponse,
  ScenarioName,
} from "./types.js";

export const TAU_VALUES: readonly number[] = Object.freeze(
  Array.from({ length: 13 }, (_, i) => 30 + 5 * i),
);

export const TARGET_MIN = 40;
export const TARGET_MAX = 400;

export interface QueryFormState {
  subject: string;
  scenario: ScenarioName;
  architecture: ArchitectureName;
  targetBgl: number;
  tau: number;
  plannedCarbs: number | null;
}

export function defaultForm(): QueryFormState {
  return {
    subject: "",
    scenario: "carbs-all",
    architecture: "nbeats",
    targetBgl: 120,
    tau: 60,
    plannedCarbs: null,
  };
}

export function plannedCarbsVisible(form: QueryFormState): boolean {
  return form.scenario === "bolus-with-carbs";
}

/** Every violation that currently blocks submission. */
export function formErrors(form: QueryFormState): string[] {
  const errors: string[] = [];
  if (!form.subject) {
    errors.push("choose a subject");
  }
  if (!TAU_VALUES.includes(form.tau)) {
    errors.push(`horizon must be one of ${TAU_VALUES.join(", ")} minutes`);
  }
  if (
    !Number.isFinite(form.targetBgl) ||
    form.targetBgl < TARGET_MIN ||
    form.targetBgl > TARGET_MAX
  ) {
    errors.push(`target must be between ${TARGET_MIN} and ${TARGET_MAX} mg/dL`);
  }
  if (plannedCarbsVisible(form)) {
    if (form.plannedCarbs === null || !Number.isFinite(form.plannedCarbs)) {
      errors.push("planned carbs are required for bolus-with-carbs");
    } else if (form.plannedCarbs <= 0) {
      errors.push("planned carbs must be positive");
    }
  }
  return errors;
}

export function canSubmit(form: QueryFormState): boolean {
  return formErrors(form).length === 0;
}

/** One answered query in the session log. */
export interface HistoryEntry {
  form: QueryFormState;
  response: RecommendResponse;
  at: number; // Date.now()
}

/** Append-only within a session; nothing is persisted. */
export class SessionLog {
  private entries: HistoryEntry[] = [];

  add(form: QueryFormState, response: RecommendResponse, at: number): void {
    this.entries.push({ form: { ...form }, response, at });
  }

  list(): readonly HistoryEntry[] {
    return this.entries;
  }

  get length(): number {
    return this.entries.length;
  }
}

export type ViewState =
  | { kind: "idle" }
  | { kind: "loading" }
  | { kind: "result"; response: RecommendResponse }
  | { kind: "field-error"; detail: string }
  | { kind: "network-error"; detail: string };

/** Map an API outcome onto the panel to render. */
export function viewAfterResponse(
  outcome:
    | { ok: true; response: RecommendResponse }
    | { ok: false; status: number | null; detail: string },
): ViewState {
  if (outcome.ok) {
    return { kind: "result", response: outcome.response };
  }
  if (outcome.status !== null && outcome.status >= 400 && outcome.status < 500) {
    return { kind: "field-error", detail: outcome.detail };
  }
  return { kind: "network-error", detail: outcome.detail };
}
