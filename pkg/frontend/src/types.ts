/** Wire types of the recommendation service. */

export type ScenarioName =
  | "carbs-all"
  | "carbs-no-bolus"
  | "bolus-all"
  | "bolus-with-carbs";

export type ArchitectureName = "lstm" | "nbeats";

export interface ModelInfo {
  checkpoint_id: string;
  subject_id: string;
  scenario: ScenarioName;
  example_class: string;
  architecture: ArchitectureName;
  seed: number;
  val_mae: number | null;
}

export interface HistoryChannels {
  bgl: number[];
  carbs: number[];
  bolus: number[];
  basal: number[];
}

export interface RecommendRequest {
  subject_id: string;
  scenario: ScenarioName;
  architecture: ArchitectureName;
  target_bgl: number;
  tau: number;
  planned_carbs?: number;
  history?: HistoryChannels;
  event_minute_of_day?: number;
}

export interface RecommendResponse {
  recommendation: number;
  display: string;
  raw_value: number;
  clamped: boolean;
  unit: string;
  model: ModelInfo;
  per_block_forecasts: number[] | null;
}

export interface HistoryWindow {
  subject_id: string;
  t: number;
  minutes: number[];
  timestamps: string[] | null;
  bgl: number[];
  interpolated: boolean[];
  carbs: number[];
  bolus: number[];
  basal: number[];
}

export interface ApiError {
  status: number;
  detail: string;
}
