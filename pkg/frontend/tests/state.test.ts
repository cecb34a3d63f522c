import { describe, expect, it } from "vitest";

import {
  canSubmit,
  defaultForm,
  formErrors,
  plannedCarbsVisible,
  SessionLog,
  TAU_VALUES,
  viewAfterResponse,
} from "../src/state.js";
import type { RecommendResponse } from "../src/types.js";

import fixture from "../fixtures/recommend.json";

const response = fixture.response as RecommendResponse;

function validForm() {
  return { ...defaultForm(), subject: "synth-9" };
}

describe("tau grid", () => {
  it("has exactly the 13 legal horizons", () => {
    expect(TAU_VALUES).toEqual([30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90]);
  });

  it("rejects off-grid horizons", () => {
    const form = { ...validForm(), tau: 37 };
    expect(canSubmit(form)).toBe(false);
    expect(formErrors(form).join(" ")).toContain("horizon");
  });
});

describe("target bounds", () => {
  it.each([39, 401, Number.NaN])("rejects %s", (target) => {
    const form = { ...validForm(), targetBgl: target as number };
    expect(canSubmit(form)).toBe(false);
  });

  it.each([40, 120, 400])("accepts %s", (target) => {
    const form = { ...validForm(), targetBgl: target as number };
    expect(canSubmit(form)).toBe(true);
  });
});

describe("planned carbs", () => {
  it("is hidden outside bolus-with-carbs", () => {
    expect(plannedCarbsVisible(validForm())).toBe(false);
  });

  it("is required and positive for bolus-with-carbs", () => {
    const form = { ...validForm(), scenario: "bolus-with-carbs" as const };
    expect(plannedCarbsVisible(form)).toBe(true);
    expect(canSubmit(form)).toBe(false);
    expect(canSubmit({ ...form, plannedCarbs: 0 })).toBe(false);
    expect(canSubmit({ ...form, plannedCarbs: 45 })).toBe(true);
  });
});

describe("submit gating", () => {
  it("blocks without a subject", () => {
    expect(canSubmit({ ...validForm(), subject: "" })).toBe(false);
  });

  it("enumerates every violation", () => {
    const errors = formErrors({
      ...validForm(),
      subject: "",
      tau: 12,
      targetBgl: 10,
    });
    expect(errors).toHaveLength(3);
  });
});

describe("session log", () => {
  it("is append-only and copies the form snapshot", () => {
    const log = new SessionLog();
    const form = validForm();
    log.add(form, response, 1000);
    form.tau = 90; // later edits must not rewrite history
    log.add(form, response, 2000);
    expect(log.length).toBe(2);
    expect(log.list()[0].form.tau).toBe(60);
    expect(log.list()[1].form.tau).toBe(90);
    expect(log.list()[0].at).toBeLessThan(log.list()[1].at);
  });
});

describe("view transitions", () => {
  it("renders results on success", () => {
    const view = viewAfterResponse({ ok: true, response });
    expect(view).toEqual({ kind: "result", response });
  });

  it("maps 4xx to inline field errors", () => {
    const view = viewAfterResponse({
      ok: false,
      status: 400,
      detail: "tau 37 not in {30..90 step 5}",
    });
    expect(view.kind).toBe("field-error");
  });

  it("maps network failures to the retry banner", () => {
    const view = viewAfterResponse({
      ok: false,
      status: null,
      detail: "network failure: fetch failed",
    });
    expect(view.kind).toBe("network-error");
  });

  it("maps 5xx to the retry banner", () => {
    const view = viewAfterResponse({ ok: false, status: 503, detail: "down" });
    expect(view.kind).toBe("network-error");
  });
});
