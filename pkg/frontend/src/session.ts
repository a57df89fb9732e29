import { GatewayError } from "./client.js";
import type { Gateway } from "./types.js";

export type Phase = "idle" | "active" | "ended";

export interface Bubble {
  index: number;
  speaker: "user" | "system";
  text: string;
  topic: string | null;
  rg: string | null;
  pending: boolean;
  failed: boolean;
}

/**
 * Session view-model. Keeps the transcript in gateway turn-index order,
 * allows exactly one in-flight message, and survives connection loss
 * non-destructively (the transcript is retained and can be restored from
 * the gateway's transcript endpoint).
 */
export class ChatSession {
  turns: Bubble[] = [];
  phase: Phase = "idle";
  inFlight = false;
  conversationId: string | null = null;
  lastError: string | null = null;
  ratingSubmitted: number | null = null;
  private failedText: string | null = null;

  constructor(
    private readonly gateway: Gateway,
    private readonly onChange: () => void = () => {},
  ) {}

  async start(userId?: string, mode?: string): Promise<void> {
    if (this.phase !== "idle") throw new Error("session already started");
    const opened = await this.gateway.startSession(userId, mode);
    this.conversationId = opened.conversation_id;
    this.phase = "active";
    this.pushBubble({
      index: opened.turn_index,
      speaker: "system",
      text: opened.reply,
      topic: opened.topic,
      rg: opened.rg,
      pending: false,
      failed: false,
    });
  }

  canSend(): boolean {
    return this.phase === "active" && !this.inFlight;
  }

  async send(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!trimmed) throw new Error("cannot send an empty message");
    if (this.phase !== "active") throw new Error("no active session");
    if (this.inFlight) throw new Error("a message is already in flight");

    const provisional = (this.turns[this.turns.length - 1]?.index ?? -1) + 1;
    const bubble: Bubble = {
      index: provisional,
      speaker: "user",
      text: trimmed,
      topic: null,
      rg: null,
      pending: true,
      failed: false,
    };
    this.pushBubble(bubble);
    this.inFlight = true;
    this.lastError = null;
    this.notify();
    try {
      const reply = await this.gateway.sendMessage(this.conversationId!, trimmed);
      bubble.index = reply.turn_index - 1;
      bubble.pending = false;
      this.pushBubble({
        index: reply.turn_index,
        speaker: "system",
        text: reply.reply,
        topic: reply.topic,
        rg: reply.rg,
        pending: false,
        failed: false,
      });
    } catch (err) {
      bubble.failed = true;
      this.failedText = trimmed;
      this.lastError = err instanceof GatewayError ? err.message : String(err);
    } finally {
      this.inFlight = false;
      this.notify();
    }
  }

  /** Resend the last failed message (retry affordance after transport errors). */
  async retry(): Promise<void> {
    if (this.failedText === null) throw new Error("nothing to retry");
    const text = this.failedText;
    this.failedText = null;
    this.turns = this.turns.filter((b) => !(b.failed && b.text === text));
    await this.send(text);
  }

  async submitRating(rating: number): Promise<void> {
    if (!Number.isInteger(rating) || rating < 1 || rating > 5) {
      throw new Error("rating must be an integer from 1 to 5");
    }
    if (this.conversationId === null) throw new Error("no session");
    await this.gateway.endSession(this.conversationId, rating);
    this.ratingSubmitted = rating;
    this.phase = "ended";
    this.notify();
  }

  /** Restore the transcript after a connection drop; keeps the local copy
   * when the gateway is still unreachable. */
  async reconnect(): Promise<void> {
    if (this.conversationId === null) return;
    try {
      const transcript = await this.gateway.transcript(this.conversationId);
      this.turns = transcript.turns.map((t) => ({
        index: t.index,
        speaker: t.speaker,
        text: t.text,
        topic: t.topic,
        rg: t.rg,
        pending: false,
        failed: false,
      }));
      this.lastError = null;
      if (transcript.ended) this.phase = "ended";
    } catch (err) {
      this.lastError = err instanceof GatewayError ? err.message : String(err);
    }
    this.notify();
  }

  private pushBubble(bubble: Bubble): void {
    this.turns.push(bubble);
    // Render order is gateway order, never arrival order.
    this.turns.sort((a, b) => a.index - b.index);
    this.notify();
  }

  private notify(): void {
    this.onChange();
  }
}
