#pragma once

// Layer building blocks over the tape. Parameters live in a ParamStore under
// "<name>.w" / "<name>.b"; init helpers create them, forward helpers read them
// through a Session.

#include "esam3/model/params.hpp"

namespace esam3::model {

/// Conv weight (out, in, k, k), He-normal; zero bias unless `bias` is false.
void add_conv(ParamStore& store, const std::string& name, ModuleTag tag, int out, int in, int k, Rng& rng,
              bool bias = true, double gain = 1.0);
/// Linear weight (in, out) with std gain/sqrt(in); zero bias.
void add_linear(ParamStore& store, const std::string& name, ModuleTag tag, int in, int out, Rng& rng,
                bool bias = true, double gain = 1.0);
/// Two-layer MLP "<name>.0" (in->hidden, relu) and "<name>.1" (hidden->out).
void add_mlp(ParamStore& store, const std::string& name, ModuleTag tag, int in, int hidden, int out, Rng& rng);

Var conv(Session& s, Var x, const std::string& name, std::int64_t stride, std::int64_t pad);
/// x: (N, in) -> (N, out).
Var linear(Session& s, Var x, const std::string& name);
Var mlp(Session& s, Var x, const std::string& name);
/// Inverted dropout; identity outside training or without an rng.
Var dropout(Session& s, Var x, double p);

/// softmax(q k^T / sqrt(d_k)) v with q: (M, d_k), k: (N, d_k), v: (N, d_v).
Var attention(Var q, Var k, Var v);

/// (C, H, W) -> (H*W, C) and back.
Var to_tokens(Var x);
Var from_tokens(Var tokens, std::int64_t h, std::int64_t w);
/// Repeats a (D) or (1, D) row into (n, D).
Var repeat_row(Var row, std::int64_t n);

/// Fixed 2-D sinusoidal encoding of cell centers, (h*w, dim); dim % 4 == 0.
Tensor grid_pe(std::int64_t h, std::int64_t w, int dim);
/// Encoding of a continuous position in grid units, (1, dim).
Tensor point_pe(double gx, double gy, std::int64_t h, std::int64_t w, int dim);

}  // namespace esam3::model
