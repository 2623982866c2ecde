/**
 * Versioned name-mapping table: source array names of the publicly released
 * ViT-Base/16 checkpoint archives (the reference ViT release layout, e.g.
 * "Transformer/encoderblock_0/MultiHeadDotProductAttention_1/query/kernel")
 * to vitforge dotted parameter names, with the transpose/reshape directive
 * that rearranges each array into the vitforge layout.
 *
 * Directives preserve element count; `transpose` applies before `reshape`.
 * The classification head is not mapped from the source: it is freshly
 * initialized for the requested class count (the transfer-learning head
 * swap), so its entries are marked `replaced`.
 */

export const NAME_MAP_VERSION = 1;

export interface MapEntry {
  source: string;
  target: string;
  /** Expected source shape (for validation before any transform). */
  sourceShape: number[];
  transpose?: number[];
  reshape?: number[];
  /** Head entries: present in sources, regenerated rather than copied. */
  replaced?: boolean;
}

/** Architecture dimensions the map is generated for. */
export interface MapProfile {
  patchSize: number;
  channels: number;
  hiddenDim: number;
  mlpDim: number;
  numHeads: number;
  numLayers: number;
  tokens: number; // patches + class token
}

export const VIT_BASE_PROFILE: MapProfile = {
  patchSize: 16,
  channels: 3,
  hiddenDim: 768,
  mlpDim: 3072,
  numHeads: 12,
  numLayers: 12,
  tokens: 197,
};

export function buildNameMap(profile: MapProfile = VIT_BASE_PROFILE): MapEntry[] {
  const D = profile.hiddenDim;
  const MLP = profile.mlpDim;
  const HEADS = profile.numHeads;
  const HEAD_DIM = D / HEADS;
  const PATCH = profile.patchSize;
  const CHANNELS = profile.channels;
  const TOKENS = profile.tokens;

  const entries: MapEntry[] = [
    {
      source: "embedding/kernel",
      target: "embed.patch.weight",
      sourceShape: [PATCH, PATCH, CHANNELS, D],
      // (py, px, c, d) -> (c, py, px, d), then flatten the patch axes to
      // match the (channel, row, column) patch layout vitforge uses.
      transpose: [2, 0, 1, 3],
      reshape: [PATCH * PATCH * CHANNELS, D],
    },
    { source: "embedding/bias", target: "embed.patch.bias", sourceShape: [D] },
    { source: "cls", target: "embed.cls", sourceShape: [1, 1, D], reshape: [1, D] },
    {
      source: "Transformer/posembed_input/pos_embedding",
      target: "embed.pos",
      sourceShape: [1, TOKENS, D],
      reshape: [TOKENS, D],
    },
  ];

  for (let l = 0; l < profile.numLayers; l++) {
    const src = `Transformer/encoderblock_${l}`;
    const dst = `encoder.${l}`;
    const attn = `${src}/MultiHeadDotProductAttention_1`;
    entries.push(
      { source: `${src}/LayerNorm_0/scale`, target: `${dst}.ln1.gamma`, sourceShape: [D] },
      { source: `${src}/LayerNorm_0/bias`, target: `${dst}.ln1.beta`, sourceShape: [D] },
      // (d, head, head_dim) flattens to (d, head*head_dim): the column
      // blocks line up with vitforge's per-head weight slices.
      {
        source: `${attn}/query/kernel`, target: `${dst}.attn.w_q`,
        sourceShape: [D, HEADS, HEAD_DIM], reshape: [D, D],
      },
      {
        source: `${attn}/query/bias`, target: `${dst}.attn.b_q`,
        sourceShape: [HEADS, HEAD_DIM], reshape: [D],
      },
      {
        source: `${attn}/key/kernel`, target: `${dst}.attn.w_k`,
        sourceShape: [D, HEADS, HEAD_DIM], reshape: [D, D],
      },
      {
        source: `${attn}/key/bias`, target: `${dst}.attn.b_k`,
        sourceShape: [HEADS, HEAD_DIM], reshape: [D],
      },
      {
        source: `${attn}/value/kernel`, target: `${dst}.attn.w_v`,
        sourceShape: [D, HEADS, HEAD_DIM], reshape: [D, D],
      },
      {
        source: `${attn}/value/bias`, target: `${dst}.attn.b_v`,
        sourceShape: [HEADS, HEAD_DIM], reshape: [D],
      },
      // (head, head_dim, d) flattens to (head*head_dim, d): rows line up
      // with the concatenated head outputs.
      {
        source: `${attn}/out/kernel`, target: `${dst}.attn.w_o`,
        sourceShape: [HEADS, HEAD_DIM, D], reshape: [D, D],
      },
      { source: `${attn}/out/bias`, target: `${dst}.attn.b_o`, sourceShape: [D] },
      { source: `${src}/LayerNorm_2/scale`, target: `${dst}.ln2.gamma`, sourceShape: [D] },
      { source: `${src}/LayerNorm_2/bias`, target: `${dst}.ln2.beta`, sourceShape: [D] },
      {
        source: `${src}/MlpBlock_3/Dense_0/kernel`, target: `${dst}.mlp.w1`,
        sourceShape: [D, MLP],
      },
      { source: `${src}/MlpBlock_3/Dense_0/bias`, target: `${dst}.mlp.b1`, sourceShape: [MLP] },
      {
        source: `${src}/MlpBlock_3/Dense_1/kernel`, target: `${dst}.mlp.w2`,
        sourceShape: [MLP, D],
      },
      { source: `${src}/MlpBlock_3/Dense_1/bias`, target: `${dst}.mlp.b2`, sourceShape: [D] },
    );
  }

  entries.push(
    { source: "Transformer/encoder_norm/scale", target: "final_ln.gamma", sourceShape: [D] },
    { source: "Transformer/encoder_norm/bias", target: "final_ln.beta", sourceShape: [D] },
    // Replaced by a fresh head for the target class count; the source
    // arrays (pretrained 21k-class head) are validated loosely and dropped.
    { source: "head/kernel", target: "head.weight", sourceShape: [D, -1], replaced: true },
    { source: "head/bias", target: "head.bias", sourceShape: [-1], replaced: true },
  );
  return entries;
}
