import { GatewayClient } from "./client.js";
import { ChatSession } from "./session.js";

/** DOM wiring for index.html. Badges showing topic/generator per system
 * turn are a debug affordance behind the ?debug=1 query flag. */

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const debug = params.get("debug") === "1";
  const base = params.get("gateway") ?? `${window.location.protocol}//${window.location.host}`;

  const session = new ChatSession(new GatewayClient(base), render);

  const thread = document.getElementById("thread") as HTMLDivElement;
  const input = document.getElementById("message") as HTMLInputElement;
  const sendButton = document.getElementById("send") as HTMLButtonElement;
  const status = document.getElementById("status") as HTMLDivElement;
  const endButton = document.getElementById("end") as HTMLButtonElement;
  const ratingBar = document.getElementById("rating") as HTMLDivElement;

  function render(): void {
    thread.replaceChildren(
      ...session.turns.map((bubble) => {
        const el = document.createElement("div");
        el.className = `bubble ${bubble.speaker}${bubble.failed ? " failed" : ""}`;
        el.textContent = bubble.text;
        if (debug && bubble.speaker === "system" && bubble.rg) {
          const badge = document.createElement("span");
          badge.className = "badge";
          badge.textContent = `${bubble.topic ?? "-"} / ${bubble.rg}`;
          el.appendChild(badge);
        }
        return el;
      }),
    );
    thread.scrollTop = thread.scrollHeight;
    const busy = !session.canSend();
    sendButton.disabled = busy || input.value.trim() === "";
    input.disabled = session.phase !== "active" || session.inFlight;
    status.textContent = session.lastError
      ? `${session.lastError} (press send to retry)`
      : session.inFlight
        ? "thinking..."
        : session.phase === "ended"
          ? `thanks for chatting${session.ratingSubmitted ? `, rated ${session.ratingSubmitted}` : ""}!`
          : "";
    ratingBar.style.display = session.phase === "active" ? "flex" : "none";
  }

  async function submit(): Promise<void> {
    const text = input.value;
    if (!text.trim()) return;
    input.value = "";
    try {
      if (session.lastError) {
        await session.retry();
      } else {
        await session.send(text);
      }
    } catch {
      // the session records the error; render shows the retry affordance
    }
  }

  sendButton.addEventListener("click", () => void submit());
  input.addEventListener("keydown", (event) => {
    if (event.key === "Enter" && !sendButton.disabled) void submit();
  });
  input.addEventListener("input", render);
  endButton.addEventListener("click", () => {
    ratingBar.querySelectorAll("button").forEach((b) => (b.style.display = "inline-block"));
  });
  for (let value = 1; value <= 5; value += 1) {
    const star = document.getElementById(`rate-${value}`) as HTMLButtonElement;
    star.addEventListener("click", () => void session.submitRating(value));
  }
  window.addEventListener("online", () => void session.reconnect());

  void session.start().catch((err) => {
    status.textContent = `could not reach the gateway: ${String(err)}`;
  });
}

main();
