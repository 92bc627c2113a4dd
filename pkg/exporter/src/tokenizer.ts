/**
 * Tokenizers for corpus export. The pruning toolkit itself never tokenizes;
 * all text handling lives here.
 *
 * "byte" is the built-in desk-scale tokenizer: UTF-8 bytes as token ids
 * (vocabulary 256). It is exact, reversible, and needs no vocabulary files.
 */

export interface Tokenizer {
  readonly id: string;
  readonly vocabSize: number;
  encode(text: string): Uint32Array;
}

class ByteTokenizer implements Tokenizer {
  readonly id = "byte";
  readonly vocabSize = 256;

  encode(text: string): Uint32Array {
    const bytes = Buffer.from(text, "utf-8");
    const ids = new Uint32Array(bytes.length);
    for (let i = 0; i < bytes.length; i++) ids[i] = bytes[i];
    return ids;
  }
}

export function getTokenizer(id: string): Tokenizer {
  if (id === "byte") return new ByteTokenizer();
  throw new Error(`unknown tokenizer "${id}" (supported: byte)`);
}
