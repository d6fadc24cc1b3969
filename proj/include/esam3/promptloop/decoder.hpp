#pragma once

// Prompt-conditioned mask decoder shared by the student (and the trained
// teacher). Prompt tokens and a concept vector cross-attend to the image
// embedding; a hypernetwork row turns the query into per-cell mask logits.

#include "esam3/model/student.hpp"
#include "esam3/promptloop/prompt.hpp"

namespace esam3::prompt {

using model::ModelConfig;
using model::ParamStore;
using model::Session;
using num::Var;

void init_prompt_decoder(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// Computed once per image from projected features (C, G, G) -> (D, G, G).
Var image_embedding(Session& s, Var features);

/// Rasterized prompts, (3, G, G): positive-point and negative-point
/// Gaussians (sigma = 1 cell) and per-cell box coverage.
Tensor dense_prompt_maps(const PromptSet& prompts, std::int64_t grid, int stride);

/// Mask logits (G, G) for one prompt set.
Var decode_prompts(Session& s, const ModelConfig& cfg, Var embedding, const PromptSet& prompts, int stride);

}  // namespace esam3::prompt
