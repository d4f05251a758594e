#pragma once

#include <string>
#include <vector>

#include "nct/image.hpp"
#include "nct/ops.hpp"
#include "nct/param_store.hpp"
#include "nct/rng.hpp"
#include "nct/synthworld.hpp"

namespace nct {

// ---- vocabulary ----
// Closed token set; data/vocab.txt ships the same list (see vocab_file_text).
// The col_/pat_/len_/cat_ block exists only for the no-control ablation,
// which appends a garment's attributes as prompt tokens; ordinary prompts
// never use it.

inline constexpr int kCondDim = 64;   // D
inline constexpr int kCondLen = 12;   // L
inline constexpr int kGarmentFeatDim = 43;

const std::vector<std::string>& vocabulary();
int vocab_index(const std::string& token);  // throws naming the token
std::string vocab_file_text();              // versioned shipped copy

// Ordered tokens; must contain "clothes" exactly once.
struct PromptTokens {
    std::vector<std::string> tokens;
};

void validate_prompt(const PromptTokens& p);
PromptTokens parse_prompt(const std::string& space_separated);

// Standard prompt for a person record: clothes + expression + age + bg + stance.
PromptTokens prompt_for_person(const PersonSpec& person);
// Garment attribute tokens (col_/pat_/len_/cat_) for the no-control ablation.
std::vector<std::string> garment_attribute_tokens(const GarmentSpec& g);

// ---- garment featurizer ----
// 43 dims: 27 = 3x3 grid x mean RGB over the card foreground, 8-bin hue
// histogram, then mean |dx|, mean |dy|, foreground fraction, vertical-extent
// ratio; jointly L2-normalized. SE_C zeroes the 27 spatial dims first.

enum class FeaturizerVariant { SE, SE_C };

struct GarmentFeature {
    Tensor v;  // (43), unit norm
};

GarmentFeature featurize_garment(const ImageGrid& card, FeaturizerVariant variant);
// Same descriptor computed over an explicit foreground mask inside a crop
// box; this is how the fidelity metric reads generated images.
GarmentFeature featurize_region(const ImageGrid& img, const std::vector<uint8_t>& mask,
                                int y0, int x0, int y1, int x1, FeaturizerVariant variant);

float cosine(const GarmentFeature& a, const GarmentFeature& b);

// ---- condition encoding ----

struct ConditionEmbedding {
    Tensor rows;  // (L, D): garment row, token rows, null padding
    Tensor mask;  // (L) 1 for real rows
};

// Adds cond/token_table (V,D), cond/garment_proj (43,D), cond/null_row (D).
void build_cond_params(ParamStore& store, RngStream& rng);

ConditionEmbedding encode_condition(const PromptTokens& prompt, const GarmentFeature& feat,
                                    const ParamStore& table);
ConditionEmbedding null_condition(const ParamStore& table);

// Differentiable batch assembly; drop_cond items get all-null rows and an
// all-zero mask row (classifier-free guidance's unconditional half).
template <typename S>
struct CondBatchVar {
    VarT<S> rows;     // (B,L,D)
    TensorT<S> mask;  // (B,L)
};

template <typename S>
CondBatchVar<S> encode_cond_batch(TapeT<S>& tape, TapeParams<S>& params,
                                  const std::vector<PromptTokens>& prompts,
                                  const TensorT<S>& garment_feats,  // (B,43)
                                  const std::vector<uint8_t>& drop_cond) {
    int b = garment_feats.dim(0);
    check(static_cast<int>(prompts.size()) == b && static_cast<int>(drop_cond.size()) == b,
          "encode_cond_batch: batch size mismatch");
    const int l = kCondLen, d = kCondDim;
    int vocab_n = static_cast<int>(vocabulary().size());

    VarT<S> table = params("cond/token_table");
    VarT<S> null_row = params("cond/null_row");
    VarT<S> proj = params("cond/garment_proj");

    // (V+1, D) with the null row appended so padding is a plain gather.
    VarT<S> table_ext =
        ops::concat<S>({table, ops::reshape(null_row, {1, d})}, 0);

    std::vector<int> ids(static_cast<size_t>(b) * (l - 1), vocab_n);
    TensorT<S> mask({b, l});
    TensorT<S> keep_flag({b, 1, 1});
    for (int i = 0; i < b; ++i) {
        validate_prompt(prompts[i]);
        if (drop_cond[i]) continue;
        keep_flag[i] = S(1);
        mask[static_cast<int64_t>(i) * l + 0] = S(1);
        const auto& toks = prompts[i].tokens;
        check(static_cast<int>(toks.size()) <= l - 1,
              "prompt too long: " + std::to_string(toks.size()) + " tokens for L=" +
                  std::to_string(l));
        for (size_t t = 0; t < toks.size(); ++t) {
            ids[static_cast<size_t>(i) * (l - 1) + t] = vocab_index(toks[t]);
            mask[static_cast<int64_t>(i) * l + 1 + static_cast<int64_t>(t)] = S(1);
        }
    }

    VarT<S> token_rows = ops::reshape(ops::gather_rows(table_ext, ids), {b, l - 1, d});

    // Garment row: feats * proj for kept items, the null row otherwise.
    VarT<S> grow = ops::reshape(ops::matmul(tape.constant(garment_feats), proj), {b, 1, d});
    TensorT<S> keep_full({b, 1, d}), drop_full({b, 1, d});
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < d; ++j) {
            keep_full[static_cast<int64_t>(i) * d + j] = keep_flag[i];
            drop_full[static_cast<int64_t>(i) * d + j] = S(1) - keep_flag[i];
        }
    std::vector<int> null_ids(static_cast<size_t>(b), vocab_n);
    VarT<S> null_rows_b = ops::reshape(ops::gather_rows(table_ext, null_ids), {b, 1, d});
    VarT<S> row0 = ops::add(ops::mul(grow, tape.constant(keep_full)),
                            ops::mul(null_rows_b, tape.constant(drop_full)));

    CondBatchVar<S> out;
    out.rows = ops::concat<S>({row0, token_rows}, 1);
    out.mask = mask;
    return out;
}

}  // namespace nct
