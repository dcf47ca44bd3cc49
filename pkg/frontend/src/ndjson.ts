// Incremental newline-delimited JSON decoding for fetch body streams.

export class NdjsonParser {
  private tail = '';

  /** Feed a chunk of text; returns every complete JSON object it closed. */
  push(chunk: string): unknown[] {
    this.tail += chunk;
    const out: unknown[] = [];
    let idx: number;
    while ((idx = this.tail.indexOf('\n')) >= 0) {
      const line = this.tail.slice(0, idx).trim();
      this.tail = this.tail.slice(idx + 1);
      if (line.length > 0) {
        out.push(JSON.parse(line));
      }
    }
    return out;
  }

  /** Flush a trailing unterminated line (stream end). */
  flush(): unknown[] {
    const line = this.tail.trim();
    this.tail = '';
    return line.length > 0 ? [JSON.parse(line)] : [];
  }
}

export async function* readNdjson(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<unknown> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  const parser = new NdjsonParser();
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      for (const msg of parser.push(decoder.decode(value, { stream: true }))) {
        yield msg;
      }
    }
    for (const msg of parser.flush()) {
      yield msg;
    }
  } finally {
    reader.releaseLock();
  }
}
