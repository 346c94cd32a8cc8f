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

#include <cmath>

#include <gtest/gtest.h>

#include "msbert/encoder.hpp"
#include "msbert/error.hpp"
#include "msbert/grad_check.hpp"

namespace msbert {
namespace {

EncoderConfig tiny(std::size_t vocab = 64) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.hidden_dim = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ff_dim = 32;
  c.max_positions = 32;
  c.dropout_rate = 0.1;
  return c;
}

TokenizedSequence sequence(std::vector<int> ids) {
  TokenizedSequence s;
  for (std::size_t i = 0; i < ids.size(); ++i) s.push(ids[i], static_cast<int>(i));
  return s;
}

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform() * 2.0 - 1.0;
  return t;
}

TEST(EncoderConfig, Validation) {
  EXPECT_NO_THROW(tiny().validate());
  auto c = tiny();
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.num_layers = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(EncoderConfig, JsonRoundTrip) {
  const auto c = tiny();
  nlohmann::json j = c;
  EXPECT_EQ(j.get<EncoderConfig>(), c);
}

TEST(InitParams, SameSeedIsBitIdentical) {
  auto a = init_params(tiny(), 5);
  auto b = init_params(tiny(), 5);
  auto c = init_params(tiny(), 6);
  ASSERT_EQ(a.names(), b.names());
  bool differs = false;
  for (const auto& name : a.names()) {
    EXPECT_EQ(a.at(name).value, b.at(name).value) << name;
    if (c.at(name).value != a.at(name).value) differs = true;
  }
  EXPECT_TRUE(differs);
}

TEST(InitParams, CountMatchesShapes) {
  // Per layer: 4 (d*d + d) + 2d attention, d*f + f + f*d + d + 2d feed-forward.
  const std::size_t d = 16, f = 32, V = 64, P = 32;
  const std::size_t per_layer = 4 * (d * d + d) + 2 * d + (d * f + f + f * d + d + 2 * d);
  EXPECT_EQ(per_layer, 2224u);
  const std::size_t embeddings = V * d + P * d + 2 * d + 2 * d;
  EXPECT_EQ(embeddings, 1600u);
  auto store = init_params(tiny(), 1);
  EXPECT_EQ(store.scalar_count(), 2 * per_layer + embeddings);
  EXPECT_EQ(encoder_param_count(tiny()), store.scalar_count());
  auto big = EncoderConfig::desk(1000);
  EXPECT_EQ(encoder_param_count(big), init_params(big, 1).scalar_count());
}

TEST(InitParams, GainsOneBiasesZeroWeightsTruncated) {
  auto store = init_params(tiny(), 2);
  for (const auto& [name, p] : store) {
    if (name.ends_with(".gain")) {
      for (double v : p.value.values()) EXPECT_EQ(v, 1.0) << name;
    } else if (name.ends_with(".bias")) {
      for (double v : p.value.values()) EXPECT_EQ(v, 0.0) << name;
    } else {
      for (double v : p.value.values()) EXPECT_LE(std::abs(v), 0.04 + 1e-15) << name;
    }
    EXPECT_TRUE(is_encoder_param(name)) << name;
  }
}

TEST(Encode, OutputShape) {
  auto c = tiny();
  auto store = init_params(c, 3);
  for (std::size_t len : {1u, 7u, 32u}) {
    std::vector<int> ids(len);
    for (std::size_t i = 0; i < len; ++i) ids[i] = static_cast<int>(i % 64);
    auto out = encode_eval(store, c, sequence(ids));
    EXPECT_EQ(out.shape(), (Shape{len, 16}));
    EXPECT_TRUE(all_finite(out));
  }
}

TEST(Encode, OverLengthNamesMaxPositions) {
  auto c = tiny();
  auto store = init_params(c, 3);
  try {
    encode_eval(store, c, sequence(std::vector<int>(33, 5)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("max_positions 32"), std::string::npos);
  }
  EXPECT_THROW(encode_eval(store, c, sequence({64})), Error);
}

TEST(Encode, AttentionRowsSumToOne) {
  auto c = tiny();
  auto store = init_params(c, 4);
  auto seq = sequence({2, 10, 11, 12, 3});
  seq.push(0, kNoWord, 0);
  seq.push(0, kNoWord, 0);
  EncodeTrace trace;
  encode_eval(store, c, seq, &trace);
  ASSERT_EQ(trace.attention.size(), 2u);
  for (const auto& layer : trace.attention) {
    ASSERT_EQ(layer.size(), 2u);
    for (const auto& probs : layer) {
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k < probs.cols(); ++k) {
          if (seq.attention_mask[k] == 0) EXPECT_EQ(probs.at(r, k), 0.0);
          total += probs.at(r, k);
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(Encode, PaddingInvariance) {
  auto c = tiny();
  auto store = init_params(c, 5);
  auto seq = sequence({2, 20, 21, 22, 23, 3});
  auto base = encode_eval(store, c, seq);
  auto padded = seq;
  for (int i = 0; i < 5; ++i) padded.push(0, kNoWord, 0);
  auto out = encode_eval(store, c, padded);
  for (std::size_t r = 0; r < seq.size(); ++r) {
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(out.at(r, k), base.at(r, k), 1e-9);
  }
}

TEST(Encode, EvalIsPureAndBatchOrderFree) {
  auto c = tiny();
  auto store = init_params(c, 6);
  std::vector<TokenizedSequence> batch{sequence({2, 5, 3}), sequence({2, 7, 8, 9, 3}),
                                       sequence({2, 40, 3})};
  std::vector<Tensor> forward, backward;
  for (const auto& s : batch) forward.push_back(encode_eval(store, c, s));
  for (auto it = batch.rbegin(); it != batch.rend(); ++it) {
    backward.insert(backward.begin(), encode_eval(store, c, *it));
  }
  EXPECT_EQ(forward, backward);
}

TEST(Encode, TrainModeDropoutIsSeeded) {
  auto c = tiny();
  auto store = init_params(c, 7);
  auto seq = sequence({2, 5, 6, 3});
  auto run = [&](std::uint64_t seed) {
    Tape tape;
    Rng rng(seed);
    return encode(tape, store, c, seq, Mode::train, rng).value();
  };
  EXPECT_EQ(run(1), run(1));
  EXPECT_NE(run(1), run(2));
  EXPECT_NE(run(1), encode_eval(store, c, seq));
}

TEST(Encode, GradientMatchesFiniteDifferences) {
  EncoderConfig c = tiny(12);
  c.hidden_dim = 8;
  c.ff_dim = 12;
  c.max_positions = 8;
  auto store = init_params(c, 8);
  // Larger weights exercise the nonlinearities.
  Rng jitter(9);
  for (auto& [name, p] : store) {
    for (double& v : p.value.values()) v += 0.3 * (jitter.uniform() - 0.5);
  }
  TokenizedSequence seq = sequence({2, 5, 6, 7, 3});
  seq.push(0, kNoWord, 0);
  Rng probe_rng(10);
  Tensor probe = random_tensor(probe_rng, {6, 8});
  StoreLoss f = [&](Tape& tape, ParamStore& ps) {
    Rng drop(11);
    Var h = encode(tape, ps, c, seq, Mode::train, drop);
    return sum(mul(h, tape.constant(probe)));
  };
  auto report = grad_check(f, store);
  EXPECT_LT(report.max_error, 1e-4) << report.worst_tensor << "[" << report.worst_index << "]";
  EXPECT_EQ(report.coordinates, store.scalar_count());
}

// Independent per-gate recurrence with explicit index arithmetic.
std::vector<std::vector<double>> lstm_oracle(const Tensor& x, const Tensor& wi, const Tensor& wr,
                                             const Tensor& b, bool reverse) {
  const std::size_t n = x.rows(), H = wr.dim(0);
  std::vector<std::vector<double>> out(n, std::vector<double>(H));
  std::vector<double> h(H, 0.0), c(H, 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    std::vector<double> hn(H), cn(H);
    for (std::size_t j = 0; j < H; ++j) {
      double pre[4];
      for (std::size_t gate = 0; gate < 4; ++gate) {
        const std::size_t col = gate * H + j;
        double z = b[col];
        for (std::size_t k = 0; k < x.cols(); ++k) z += x.at(t, k) * wi.at(k, col);
        for (std::size_t k = 0; k < H; ++k) z += h[k] * wr.at(k, col);
        pre[gate] = z;
      }
      cn[j] = sig(pre[1]) * c[j] + sig(pre[0]) * std::tanh(pre[2]);
      hn[j] = sig(pre[3]) * std::tanh(cn[j]);
    }
    h = hn;
    c = cn;
    out[t] = h;
  }
  return out;
}

TEST(Lstm, MatchesScalarOracle) {
  Rng rng(12);
  Tensor x = random_tensor(rng, {3, 3});
  Tensor wi = random_tensor(rng, {3, 8});
  Tensor wr = random_tensor(rng, {2, 8});
  Tensor b = random_tensor(rng, {8});
  for (bool reverse : {false, true}) {
    Tape tape;
    Var y = lstm(tape.constant(x), tape.constant(wi), tape.constant(wr), tape.constant(b), reverse);
    auto expect = lstm_oracle(x, wi, wr, b, reverse);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y.value().at(t, j), expect[t][j], 1e-10);
    }
  }
}

TEST(Lstm, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  for (bool reverse : {false, true}) {
    auto f = [&](Tape& tape, std::span<const Var> v) {
      Var y = lstm(v[0], v[1], v[2], v[3], reverse);
      return sum(mul(y, v[4]));
    };
    auto report = grad_check(f, {random_tensor(rng, {4, 3}), random_tensor(rng, {3, 12}),
                                 random_tensor(rng, {3, 12}), random_tensor(rng, {12}),
                                 random_tensor(rng, {4, 3})});
    EXPECT_LT(report.max_error, 1e-7);
  }
}

TEST(BiLstm, LengthOneShape) {
  BiLstmConfig c{2, 3, 0.2};
  ParamStore store;
  Rng rng(14);
  add_bilstm_params(store, c, 5, rng);
  EXPECT_EQ(store.scalar_count(), bilstm_param_count(c, 5));
  Tape tape;
  Rng drop(1);
  Var y = bilstm(tape.constant(random_tensor(rng, {1, 5})), c, store, Mode::eval, drop);
  EXPECT_EQ(y.shape(), (Shape{1, 6}));
  for (const auto& [name, p] : store) EXPECT_EQ(p.group, 1) << name;
}

TEST(BiLstm, ZeroWeightsGiveZeroOutputs) {
  BiLstmConfig c{2, 4, 0.0};
  ParamStore store;
  Rng rng(15);
  add_bilstm_params(store, c, 3, rng);
  for (auto& [name, p] : store) p.value.fill(0.0);
  Tape tape;
  Rng drop(1);
  Var y = bilstm(tape.constant(random_tensor(rng, {5, 3})), c, store, Mode::train, drop);
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(BiLstm, ConcatenatesDirections) {
  BiLstmConfig c{1, 2, 0.0};
  ParamStore store;
  Rng rng(16);
  add_bilstm_params(store, c, 3, rng);
  Tensor x = random_tensor(rng, {4, 3});
  Tape tape;
  Rng drop(1);
  Var y = bilstm(tape.constant(x), c, store, Mode::eval, drop);
  auto fwd = lstm_oracle(x, store.at("bilstm.l0.fwd.input.weight").value,
                         store.at("bilstm.l0.fwd.recurrent.weight").value,
                         store.at("bilstm.l0.fwd.bias").value, false);
  auto bwd = lstm_oracle(x, store.at("bilstm.l0.bwd.input.weight").value,
                         store.at("bilstm.l0.bwd.recurrent.weight").value,
                         store.at("bilstm.l0.bwd.bias").value, true);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(y.value().at(t, j), fwd[t][j], 1e-12);
      EXPECT_NEAR(y.value().at(t, 2 + j), bwd[t][j], 1e-12);
    }
  }
}

TEST(BiLstm, ShapeMismatchIsError) {
  BiLstmConfig c{1, 2, 0.0};
  ParamStore store;
  Rng rng(17);
  add_bilstm_params(store, c, 3, rng);
  Tape tape;
  Rng drop(1);
  EXPECT_THROW(bilstm(tape.constant(random_tensor(rng, {4, 5})), c, store, Mode::eval, drop),
               Error);
}

TEST(BiLstm, StackedGradientThroughEncoder) {
  EncoderConfig ec = tiny(10);
  ec.hidden_dim = 4;
  ec.num_layers = 1;
  ec.ff_dim = 6;
  ec.max_positions = 6;
  auto store = init_params(ec, 18);
  BiLstmConfig lc{2, 3, 0.2};
  Rng rng(19);
  add_bilstm_params(store, lc, 4, rng);
  auto seq = sequence({2, 4, 5, 3});
  Tensor probe = random_tensor(rng, {4, 6});
  StoreLoss f = [&](Tape& tape, ParamStore& ps) {
    Rng drop(20);
    Var h = encode(tape, ps, ec, seq, Mode::train, drop);
    return sum(mul(bilstm(h, lc, ps, Mode::train, drop), tape.constant(probe)));
  };
  auto report = grad_check(f, store);
  EXPECT_LT(report.max_error, 1e-4) << report.worst_tensor;
}

}  // namespace
}  // namespace msbert
