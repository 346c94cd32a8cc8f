// Copyright 2026 The msbert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "msbert/encoder.hpp"

#include <cmath>
#include <limits>

#include "msbert/error.hpp"

namespace msbert {
namespace {

constexpr double kInitStddev = 0.02;

Tensor truncated(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.truncated_normal(kInitStddev);
  return t;
}

void add_affine(ParamStore& store, const std::string& name, std::size_t in,
                std::size_t out, Rng& rng) {
  store.add(name + ".weight", truncated({in, out}, rng));
  store.add(name + ".bias", Tensor({out}));
}

void add_norm(ParamStore& store, const std::string& name, std::size_t width) {
  store.add(name + ".gain", Tensor({width}, 1.0));
  store.add(name + ".bias", Tensor({width}));
}

std::string layer_prefix(std::size_t i) { return "layer." + std::to_string(i); }

Var affine(Tape& tape, ParamStore& params, Var x, const std::string& name) {
  return linear(x, tape.param(params.at(name + ".weight")),
                tape.param(params.at(name + ".bias")));
}

Var norm(Tape& tape, ParamStore& params, Var x, const std::string& name, double eps) {
  return layer_norm(x, tape.param(params.at(name + ".gain")),
                    tape.param(params.at(name + ".bias")), eps);
}

void require_positive(std::size_t v, const char* field) {
  if (v == 0) throw Error(std::string("config: ") + field + " must be >= 1");
}

void require_rate(double r, const char* field) {
  if (!(r >= 0.0 && r < 1.0)) {
    throw Error(std::string("config: ") + field + " must lie in [0, 1)");
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void EncoderConfig::validate() const {
  require_positive(vocab_size, "vocab_size");
  require_positive(hidden_dim, "hidden_dim");
  require_positive(num_layers, "num_layers");
  require_positive(num_heads, "num_heads");
  require_positive(ff_dim, "ff_dim");
  require_positive(max_positions, "max_positions");
  require_rate(dropout_rate, "dropout_rate");
  if (hidden_dim % num_heads != 0) {
    throw Error("config: hidden_dim " + std::to_string(hidden_dim) +
                " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (!(layer_norm_eps > 0.0)) throw Error("config: layer_norm_eps must be > 0");
}

EncoderConfig EncoderConfig::desk(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  return c;
}

EncoderConfig EncoderConfig::base(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.hidden_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.ff_dim = 3072;
  c.max_positions = 512;
  return c;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},     {"hidden_dim", c.hidden_dim},
                     {"num_layers", c.num_layers},     {"num_heads", c.num_heads},
                     {"ff_dim", c.ff_dim},             {"max_positions", c.max_positions},
                     {"dropout_rate", c.dropout_rate}, {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("ff_dim").get_to(c.ff_dim);
  j.at("max_positions").get_to(c.max_positions);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("layer_norm_eps").get_to(c.layer_norm_eps);
}

std::size_t encoder_param_count(const EncoderConfig& c) {
  const std::size_t d = c.hidden_dim, f = c.ff_dim;
  const std::size_t embeddings = (c.vocab_size + c.max_positions + 2) * d + 2 * d;
  const std::size_t attention = 4 * (d * d + d) + 2 * d;
  const std::size_t ffn = d * f + f + f * d + d + 2 * d;
  return embeddings + c.num_layers * (attention + ffn);
}

void add_encoder_params(ParamStore& store, const EncoderConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d = c.hidden_dim;
  store.add("embeddings.token", truncated({c.vocab_size, d}, rng));
  store.add("embeddings.position", truncated({c.max_positions, d}, rng));
  store.add("embeddings.segment", truncated({2, d}, rng));
  add_norm(store, "embeddings.norm", d);
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const std::string p = layer_prefix(i);
    for (const char* proj : {"query", "key", "value", "output"}) {
      add_affine(store, p + ".attention." + proj, d, d, rng);
    }
    add_norm(store, p + ".attention.norm", d);
    add_affine(store, p + ".ffn.inner", d, c.ff_dim, rng);
    add_affine(store, p + ".ffn.outer", c.ff_dim, d, rng);
    add_norm(store, p + ".ffn.norm", d);
  }
}

ParamStore init_params(const EncoderConfig& config, std::uint64_t seed) {
  ParamStore store;
  Rng rng = Rng(seed).derive("init");
  add_encoder_params(store, config, rng);
  return store;
}

bool is_encoder_param(const std::string& name) {
  return name.starts_with("embeddings.") || name.starts_with("layer.");
}

Var encode(Tape& tape, ParamStore& params, const EncoderConfig& c,
           std::span<const int> piece_ids, std::span<const int> attention_mask,
           Mode mode, Rng& dropout_rng, EncodeTrace* trace) {
  const std::size_t len = piece_ids.size();
  if (len == 0) throw Error("encode: empty input");
  if (attention_mask.size() != len) throw Error("encode: attention_mask length mismatch");
  if (len > c.max_positions) {
    throw Error("encode: input length " + std::to_string(len) + " exceeds max_positions " +
                std::to_string(c.max_positions));
  }
  for (int id : piece_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw Error("encode: piece id " + std::to_string(id) + " outside vocab_size " +
                  std::to_string(c.vocab_size));
    }
  }

  bool any_masked = false, any_attended = false;
  for (int m : attention_mask) (m == 0 ? any_masked : any_attended) = true;
  if (!any_attended) throw Error("encode: attention_mask has no attended position");
  Tensor mask_bias;
  if (any_masked) {
    mask_bias = Tensor({len, len});
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < len; ++r) {
      for (std::size_t k = 0; k < len; ++k) {
        if (attention_mask[k] == 0) mask_bias.at(r, k) = neg_inf;
      }
    }
  }

  std::vector<int> positions(len), segments(len, 0);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);

  const double rate = c.dropout_rate;
  Var h = add(add(embedding(tape.param(params.at("embeddings.token")), piece_ids),
                  embedding(tape.param(params.at("embeddings.position")), positions)),
              embedding(tape.param(params.at("embeddings.segment")), segments));
  h = norm(tape, params, h, "embeddings.norm", c.layer_norm_eps);
  h = dropout(h, rate, dropout_rng, mode);

  const std::size_t dh = c.hidden_dim / c.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (trace) trace->attention.assign(c.num_layers, {});

  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const std::string p = layer_prefix(i) + ".";
    Var q = affine(tape, params, h, p + "attention.query");
    Var k = affine(tape, params, h, p + "attention.key");
    Var v = affine(tape, params, h, p + "attention.value");
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < c.num_heads; ++hd) {
      Var scores = scale(matmul_nt(slice_cols(q, hd * dh, dh), slice_cols(k, hd * dh, dh)),
                         inv_sqrt);
      if (any_masked) scores = add_constant(scores, mask_bias);
      Var probs = softmax(scores);
      if (trace) trace->attention[i].push_back(probs.value());
      heads.push_back(matmul(probs, slice_cols(v, hd * dh, dh)));
    }
    Var context = c.num_heads == 1 ? heads[0] : concat_cols(heads);
    Var attn = dropout(affine(tape, params, context, p + "attention.output"), rate,
                       dropout_rng, mode);
    h = norm(tape, params, add(h, attn), p + "attention.norm", c.layer_norm_eps);

    Var inner = gelu(affine(tape, params, h, p + "ffn.inner"));
    Var outer = dropout(affine(tape, params, inner, p + "ffn.outer"), rate, dropout_rng, mode);
    h = norm(tape, params, add(h, outer), p + "ffn.norm", c.layer_norm_eps);
  }
  return h;
}

Var encode(Tape& tape, ParamStore& params, const EncoderConfig& config,
           const TokenizedSequence& seq, Mode mode, Rng& dropout_rng, EncodeTrace* trace) {
  return encode(tape, params, config, seq.piece_ids, seq.attention_mask, mode, dropout_rng,
                trace);
}

Tensor encode_eval(const ParamStore& params, const EncoderConfig& config,
                   const TokenizedSequence& seq, EncodeTrace* trace) {
  Tape tape;
  Rng unused(0);
  // Eval mode never writes to the parameters; binding needs a mutable handle.
  auto& store = const_cast<ParamStore&>(params);
  return encode(tape, store, config, seq, Mode::eval, unused, trace).value();
}

void BiLstmConfig::validate() const {
  require_positive(num_layers, "bilstm.num_layers");
  require_positive(hidden_per_direction, "bilstm.hidden_per_direction");
  require_rate(inter_layer_dropout, "bilstm.inter_layer_dropout");
}

void to_json(nlohmann::json& j, const BiLstmConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"hidden_per_direction", c.hidden_per_direction},
                     {"inter_layer_dropout", c.inter_layer_dropout}};
}

void from_json(const nlohmann::json& j, BiLstmConfig& c) {
  j.at("num_layers").get_to(c.num_layers);
  j.at("hidden_per_direction").get_to(c.hidden_per_direction);
  j.at("inter_layer_dropout").get_to(c.inter_layer_dropout);
}

std::size_t bilstm_param_count(const BiLstmConfig& c, std::size_t input_dim) {
  const std::size_t h = c.hidden_per_direction;
  std::size_t total = 0, in = input_dim;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    total += 2 * (in * 4 * h + h * 4 * h + 4 * h);
    in = 2 * h;
  }
  return total;
}

void add_bilstm_params(ParamStore& store, const BiLstmConfig& c, std::size_t input_dim,
                       Rng& rng, int group, const std::string& prefix) {
  c.validate();
  const std::size_t h = c.hidden_per_direction;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  auto uniform = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
    return t;
  };
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = prefix + ".l" + std::to_string(l) + "." + dir + ".";
      store.add(p + "input.weight", uniform({in, 4 * h}), group);
      store.add(p + "recurrent.weight", uniform({h, 4 * h}), group);
      store.add(p + "bias", uniform({4 * h}), group);
    }
    in = 2 * h;
  }
}

Var lstm(Var x, Var input_weight, Var recurrent_weight, Var bias, bool reverse) {
  const Tensor& xv = x.value();
  const Tensor& wi = input_weight.value();
  const Tensor& wr = recurrent_weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || wi.rank() != 2 || wr.rank() != 2 || xv.cols() != wi.dim(0) ||
      wr.dim(1) != wi.dim(1) || wr.dim(1) != 4 * wr.dim(0) || bv.size() != wi.dim(1)) {
    throw Error("lstm: shape mismatch x " + shape_string(xv.shape()) + ", input " +
                shape_string(wi.shape()) + ", recurrent " + shape_string(wr.shape()) +
                ", bias " + shape_string(bv.shape()));
  }
  const std::size_t n = xv.rows(), in = xv.cols(), H = wr.dim(0), G = 4 * H;

  // Pre-activations from the input, then the recurrence in time order.
  Tensor z({n, G});
  for (std::size_t t = 0; t < n; ++t) {
    auto zr = z.row(t);
    for (std::size_t j = 0; j < G; ++j) zr[j] = bv[j];
  }
  gemm_nn(xv.data(), wi.data(), z.data(), n, in, G);

  Tensor gates({n, G}), cells({n, H}), out({n, H});
  std::vector<double> h_prev(H, 0.0), c_prev(H, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    auto zr = z.row(t);
    gemm_nn(h_prev.data(), wr.data(), zr.data(), 1, H, G);
    auto gr = gates.row(t);
    auto cr = cells.row(t);
    auto hr = out.row(t);
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sigmoid(zr[j]);
      const double fg = sigmoid(zr[H + j]);
      const double cg = std::tanh(zr[2 * H + j]);
      const double og = sigmoid(zr[3 * H + j]);
      gr[j] = ig, gr[H + j] = fg, gr[2 * H + j] = cg, gr[3 * H + j] = og;
      cr[j] = fg * c_prev[j] + ig * cg;
      hr[j] = og * std::tanh(cr[j]);
      c_prev[j] = cr[j];
      h_prev[j] = hr[j];
    }
  }

  const std::size_t xi = x.id(), wii = input_weight.id(), wri = recurrent_weight.id(),
                    bi = bias.id();
  return x.tape().record(
      std::move(out), {x, input_weight, recurrent_weight, bias},
      [=, gates = std::move(gates), cells = std::move(cells)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& hv = tp.value(self);
        const Tensor& xin = tp.value(xi);
        const Tensor& wiv = tp.value(wii);
        const Tensor& wrv = tp.value(wri);
        Tensor dz({n, G});
        std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0);
        for (std::size_t s = n; s-- > 0;) {
          const std::size_t t = reverse ? n - 1 - s : s;
          const bool first = s == 0;
          const std::size_t prev = reverse ? t + 1 : t - 1;
          auto gr = gates.row(t);
          auto cr = cells.row(t);
          auto gt = g.row(t);
          auto dzr = dz.row(t);
          for (std::size_t j = 0; j < H; ++j) {
            const double ig = gr[j], fg = gr[H + j], cg = gr[2 * H + j], og = gr[3 * H + j];
            const double tc = std::tanh(cr[j]);
            const double dh = gt[j] + dh_next[j];
            const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
            const double cp = first ? 0.0 : cells.at(prev, j);
            dzr[j] = dc * cg * ig * (1.0 - ig);
            dzr[H + j] = dc * cp * fg * (1.0 - fg);
            dzr[2 * H + j] = dc * ig * (1.0 - cg * cg);
            dzr[3 * H + j] = dh * tc * og * (1.0 - og);
            dc_next[j] = dc * fg;
          }
          std::fill(dh_next.begin(), dh_next.end(), 0.0);
          gemm_nt(dzr.data(), wrv.data(), dh_next.data(), 1, G, H);
          if (tp.needs_grad(wri) && !first) {
            gemm_tn(hv.row(prev).data(), dzr.data(), tp.grad_of(wri).data(), 1, H, G);
          }
        }
        if (tp.needs_grad(xi)) gemm_nt(dz.data(), wiv.data(), tp.grad_of(xi).data(), n, G, in);
        if (tp.needs_grad(wii)) gemm_tn(xin.data(), dz.data(), tp.grad_of(wii).data(), n, in, G);
        if (tp.needs_grad(bi)) {
          Tensor& gb = tp.grad_of(bi);
          for (std::size_t t = 0; t < n; ++t) {
            auto dzr = dz.row(t);
            for (std::size_t j = 0; j < G; ++j) gb[j] += dzr[j];
          }
        }
      });
}

Var bilstm(Var inputs, const BiLstmConfig& c, ParamStore& params, Mode mode,
           Rng& dropout_rng, const std::string& prefix) {
  Tape& tape = inputs.tape();
  Var x = inputs;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    if (l > 0) x = dropout(x, c.inter_layer_dropout, dropout_rng, mode);
    std::vector<Var> both;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = prefix + ".l" + std::to_string(l) + "." + dir + ".";
      const std::string key = p + "input.weight";
      if (!params.contains(key)) throw Error("bilstm: missing parameter " + key);
      both.push_back(lstm(x, tape.param(params.at(key)),
                          tape.param(params.at(p + "recurrent.weight")),
                          tape.param(params.at(p + "bias")), dir[0] == 'b'));
    }
    x = concat_cols(both);
  }
  return x;
}

}  // namespace msbert
