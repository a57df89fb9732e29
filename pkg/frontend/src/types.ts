/** Wire types for the gateway protocol (schema_version 1). */

export interface StartReply {
  schema_version: number;
  conversation_id: string;
  turn_index: number;
  reply: string;
  topic: string | null;
  rg: string | null;
}

export interface MessageReply {
  schema_version: number;
  conversation_id: string;
  turn_index: number;
  reply: string;
  topic: string | null;
  rg: string | null;
  degraded: boolean;
}

export interface TranscriptTurn {
  index: number;
  speaker: "user" | "system";
  text: string;
  topic: string | null;
  rg: string | null;
}

export interface Transcript {
  schema_version: number;
  conversation_id: string;
  mode: string;
  ended: boolean;
  turns: TranscriptTurn[];
}

export interface EndReply {
  ok: boolean;
  already_ended: boolean;
}

/** The surface the view-model needs; the HTTP client and test fakes both implement it. */
export interface Gateway {
  startSession(userId?: string, mode?: string): Promise<StartReply>;
  sendMessage(conversationId: string, text: string): Promise<MessageReply>;
  endSession(conversationId: string, rating?: number): Promise<EndReply>;
  transcript(conversationId: string): Promise<Transcript>;
}
