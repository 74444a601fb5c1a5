import { ApiClient, ApiError, QueryView } from "./api.js";
import { renderArm } from "./svg.js";
import {
  clearSelections,
  forgetSession,
  loadSelections,
  rememberSession,
  saveSelections,
  savedSession,
} from "./storage.js";

/** Criterion prompts shown to participants, one answer required for each. */
export const CRITERION_PROMPTS: Record<string, string> = {
  naturalness: "In which answer choice does the robot look most natural?",
  visual_similarity:
    "In which answer choice does the robot look most visually similar to the start position?",
  closeness: "In which answer choice is the robot closest to the start position?",
  predictability:
    "In which answer choice does the robot move how you would expect given the start configuration and red dot?",
};

const CHOICE_LABELS = ["A", "B", "C", "D", "E", "F", "G", "H"];

export class PreferenceApp {
  private api: ApiClient;
  private root: HTMLElement;
  private sessionId = "";
  private current: QueryView | null = null;
  private selections: Record<string, number> = {};

  constructor(root: HTMLElement, baseUrl = "") {
    this.root = root;
    this.api = new ApiClient(baseUrl);
  }

  /** Resume the stored session if the server still knows it, else start anew. */
  async start(): Promise<void> {
    const stored = savedSession();
    if (stored) {
      this.sessionId = stored;
      try {
        await this.advance();
        return;
      } catch (error) {
        if (error instanceof ApiError && error.status === 404) {
          forgetSession();
        } else {
          this.renderError(error);
          return;
        }
      }
    }
    try {
      const session = await this.api.newSession();
      this.sessionId = session.session_id;
      rememberSession(this.sessionId);
      await this.advance();
    } catch (error) {
      this.renderError(error);
    }
  }

  private async advance(): Promise<void> {
    const view = await this.api.nextQuery(this.sessionId);
    if (view === null) {
      this.renderComplete();
      return;
    }
    this.current = view;
    this.selections = loadSelections(this.sessionId, view.query_id);
    this.renderQuery(view);
  }

  private renderQuery(view: QueryView): void {
    this.root.innerHTML = "";
    const header = document.createElement("p");
    header.className = "progress";
    header.textContent = `Question ${view.index + 1} of ${view.total}`;
    this.root.appendChild(header);

    const panels = document.createElement("div");
    panels.className = "panels";
    const target = view.target.value as [number, number];
    panels.appendChild(this.armPanel("Start", view.links, view.start, target, "start-panel"));
    view.candidates.forEach((angles, index) => {
      panels.appendChild(
        this.armPanel(
          CHOICE_LABELS[index],
          view.links,
          angles,
          target,
          `candidate-panel candidate-${index}`,
        ),
      );
    });
    this.root.appendChild(panels);

    const form = document.createElement("form");
    form.className = "answers";
    for (const criterion of view.criteria) {
      form.appendChild(this.criterionRow(view, criterion));
    }
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "submit";
    submit.textContent = "Submit answers";
    form.appendChild(submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
    this.root.appendChild(form);
    this.updateSubmitState();
  }

  private armPanel(
    label: string,
    links: number[],
    angles: number[],
    target: [number, number],
    className: string,
  ): HTMLElement {
    const panel = document.createElement("figure");
    panel.className = `panel ${className}`;
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    renderArm(svg, links, angles, target, {
      stroke: className.startsWith("start") ? "#111" : "#2a6f97",
    });
    panel.appendChild(svg);
    const caption = document.createElement("figcaption");
    caption.textContent = label;
    panel.appendChild(caption);
    return panel;
  }

  private criterionRow(view: QueryView, criterion: string): HTMLElement {
    const row = document.createElement("fieldset");
    row.className = `criterion criterion-${criterion}`;
    const legend = document.createElement("legend");
    legend.textContent = CRITERION_PROMPTS[criterion] ?? criterion;
    row.appendChild(legend);
    for (let index = 0; index < view.m; index++) {
      const label = document.createElement("label");
      const input = document.createElement("input");
      input.type = "radio";
      input.name = criterion;
      input.value = String(index);
      input.checked = this.selections[criterion] === index;
      input.addEventListener("change", () => {
        this.selections[criterion] = index;
        saveSelections(this.sessionId, view.query_id, this.selections);
        this.updateSubmitState();
      });
      label.appendChild(input);
      label.appendChild(document.createTextNode(CHOICE_LABELS[index]));
      row.appendChild(label);
    }
    return row;
  }

  private formComplete(): boolean {
    if (!this.current) return false;
    return this.current.criteria.every(
      (criterion) => typeof this.selections[criterion] === "number",
    );
  }

  private updateSubmitState(): void {
    const submit = this.root.querySelector<HTMLButtonElement>("button.submit");
    if (submit) submit.disabled = !this.formComplete();
  }

  private async submit(): Promise<void> {
    const view = this.current;
    if (!view || !this.formComplete()) return;
    try {
      await this.api.submitAnswers(this.sessionId, view.query_id, this.selections);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // already recorded (e.g. a retried request that did land): move on
      } else {
        this.renderRetry(error);
        return;
      }
    }
    clearSelections(this.sessionId, view.query_id);
    this.selections = {};
    await this.advance();
  }

  private renderRetry(error: unknown): void {
    let note = this.root.querySelector<HTMLElement>(".network-note");
    if (!note) {
      note = document.createElement("p");
      note.className = "network-note";
      const retry = document.createElement("button");
      retry.type = "button";
      retry.className = "retry";
      retry.textContent = "Retry";
      retry.addEventListener("click", () => {
        note?.remove();
        void this.submit();
      });
      this.root.appendChild(note);
      note.appendChild(retry);
    }
    note.prepend(`Submission failed (${String(error)}). Your answers are kept. `);
  }

  private renderComplete(): void {
    const total = this.current ? this.current.total : 0;
    this.root.innerHTML = "";
    const done = document.createElement("div");
    done.className = "complete";
    const heading = document.createElement("h2");
    heading.textContent = "All done";
    const body = document.createElement("p");
    body.className = "answered-count";
    body.textContent = `You answered ${total} questions. Thank you!`;
    done.appendChild(heading);
    done.appendChild(body);
    this.root.appendChild(done);
    forgetSession();
  }

  private renderError(error: unknown): void {
    this.root.innerHTML = "";
    const message = document.createElement("p");
    message.className = "error";
    message.textContent = `Could not reach the study server: ${String(error)}`;
    this.root.appendChild(message);
  }
}
