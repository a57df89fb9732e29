import type {
  EndReply,
  Gateway,
  MessageReply,
  StartReply,
  Transcript,
} from "./types.js";

export class GatewayError extends Error {
  constructor(
    message: string,
    public readonly status: number | null = null,
    public readonly code: string | null = null,
  ) {
    super(message);
  }
}

/** Thin fetch wrapper over the gateway's HTTP endpoints. */
export class GatewayClient implements Gateway {
  constructor(private readonly baseUrl: string) {}

  async startSession(userId?: string, mode?: string): Promise<StartReply> {
    return this.post("/session", { user_id: userId ?? null, mode: mode ?? null });
  }

  async sendMessage(conversationId: string, text: string): Promise<MessageReply> {
    return this.post(`/session/${encodeURIComponent(conversationId)}/message`, { text });
  }

  async endSession(conversationId: string, rating?: number): Promise<EndReply> {
    return this.post(`/session/${encodeURIComponent(conversationId)}/end`, {
      rating: rating ?? null,
    });
  }

  async transcript(conversationId: string): Promise<Transcript> {
    const response = await fetch(
      `${this.baseUrl}/session/${encodeURIComponent(conversationId)}/transcript`,
    );
    return this.unwrap(response);
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new GatewayError(`network failure: ${String(err)}`);
    }
    return this.unwrap(response);
  }

  private async unwrap<T>(response: Response): Promise<T> {
    if (!response.ok) {
      let code: string | null = null;
      try {
        const body = (await response.json()) as { detail?: { error?: string } };
        code = body.detail?.error ?? null;
      } catch {
        // non-JSON error body; keep the status only
      }
      throw new GatewayError(`gateway returned ${response.status}`, response.status, code);
    }
    return (await response.json()) as T;
  }
}
