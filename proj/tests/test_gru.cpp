#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "proprio/gru.hpp"
#include "proprio/rng.hpp"

using namespace proprio;

namespace {

InputFrame random_frame(Rng& rng) {
  InputFrame f;
  for (int i = 0; i < 6; ++i) {
    f.q_leg[i] = rng.uniform(-1.5, 1.5);
    f.qdot_leg[i] = rng.uniform(-4.0, 4.0);
    f.tau_d_leg[i] = rng.uniform(-120.0, 120.0);
  }
  for (int i = 0; i < 3; ++i) {
    f.pelvis_ang_vel[i] = rng.uniform(-2.0, 2.0);
    f.pelvis_lin_acc[i] = rng.uniform(-12.0, 12.0);
  }
  return f;
}

double max_abs_param_diff(const GruParameters& a, const GruParameters& b) {
  const auto va = tensor_views(a);
  const auto vb = tensor_views(b);
  double worst = 0.0;
  for (size_t i = 0; i < va.size(); ++i)
    worst = std::max(worst, (va[i] - vb[i]).abs().maxCoeff());
  return worst;
}

std::filesystem::path temp_weights_path(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

TEST_CASE("input frames flatten in the documented order and scaling") {
  Rng rng(41);
  const InputFrame f = random_frame(rng);
  const VecX flat = f.flatten();
  REQUIRE(flat.size() == kGruInputSize);
  for (int i = 0; i < 6; ++i) {
    CHECK(flat[i] == f.q_leg[i]);
    CHECK(flat[6 + i] == f.qdot_leg[i]);
    CHECK(flat[12 + i] == f.tau_d_leg[i]);
  }
  for (int i = 0; i < 3; ++i) {
    CHECK(flat[18 + i] == f.pelvis_ang_vel[i]);
    CHECK(flat[21 + i] == f.pelvis_lin_acc[i]);
  }

  const VecX scale = standard_input_scale();
  const VecX scaled = scaled_input(f);
  for (int i = 0; i < kGruInputSize; ++i) CHECK(scaled[i] == flat[i] / scale[i]);
  CHECK(scale[0] == 1.0);
  CHECK(scale[6] == 4.0);
  CHECK(scale[12] == 100.0);
  CHECK(scale[18] == 2.0);
  CHECK(scale[21] == 10.0);

  InputFrame bad = f;
  bad.qdot_leg[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)scaled_input(bad), std::invalid_argument);
}

TEST_CASE("zero parameters halve the hidden state and output the bias") {
  GruParameters p(kGruInputSize, 12, kGruOutputSize);
  Rng rng(7);
  HiddenState h{VecX::NullaryExpr(12, [&](Eigen::Index) { return rng.uniform(-0.9, 0.9); })};

  // z = r = 1/2, n = tanh(0) = 0, so h' = h/2 exactly.
  const HiddenState h2 = gru_cell_step(p, random_frame(rng), h);
  CHECK((h2.h - 0.5 * h.h).cwiseAbs().maxCoeff() == 0.0);
  CHECK(gru_output(p, h2).cwiseAbs().maxCoeff() == 0.0);

  p.b_out << 0.3, -0.1, 2.0, 0.05, -1.4, 0.66;
  const VecX out = gru_output(p, h2);
  for (int i = 0; i < kGruOutputSize; ++i) CHECK(out[i] == doctest::Approx(100.0 * p.b_out[i]));
}

TEST_CASE("a saturated update gate freezes the hidden state") {
  Rng rng(11);
  GruParameters p = GruParameters::random_init(rng, kGruInputSize, 20, kGruOutputSize);
  p.bz_in.setConstant(50.0);  // z = sigmoid(~50) differs from 1 by ~2e-22
  HiddenState h{VecX::NullaryExpr(20, [&](Eigen::Index) { return rng.uniform(-0.9, 0.9); })};
  const HiddenState h2 = gru_cell_step(p, random_frame(rng), h);
  CHECK((h2.h - h.h).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cell update matches a scalar-loop reimplementation") {
  Rng rng(201);
  const int hidden = 9;
  const GruParameters p = GruParameters::random_init(rng, kGruInputSize, hidden, kGruOutputSize);
  HiddenState h{VecX::NullaryExpr(hidden, [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); })};

  for (int trial = 0; trial < 5; ++trial) {
    const InputFrame frame = random_frame(rng);
    const VecX x = scaled_input(frame);

    VecX h_ref(hidden);
    for (int i = 0; i < hidden; ++i) {
      double az = p.bz_in[i] + p.bz_rec[i];
      double ar = p.br_in[i] + p.br_rec[i];
      double an_in = p.bn_in[i];
      double k = p.bn_rec[i];
      for (int j = 0; j < kGruInputSize; ++j) {
        az += p.wz(i, j) * x[j];
        ar += p.wr(i, j) * x[j];
        an_in += p.wn(i, j) * x[j];
      }
      for (int j = 0; j < hidden; ++j) {
        az += p.uz(i, j) * h.h[j];
        ar += p.ur(i, j) * h.h[j];
        k += p.un(i, j) * h.h[j];
      }
      const double z = 1.0 / (1.0 + std::exp(-az));
      const double r = 1.0 / (1.0 + std::exp(-ar));
      const double n = std::tanh(an_in + r * k);
      h_ref[i] = (1.0 - z) * n + z * h.h[i];
    }
    VecX y_ref = 100.0 * p.b_out;
    for (int o = 0; o < kGruOutputSize; ++o)
      for (int i = 0; i < hidden; ++i) y_ref[o] += 100.0 * p.w_out(o, i) * h_ref[i];

    const HiddenState h2 = gru_cell_step(p, frame, h);
    CHECK((h2.h - h_ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((gru_output(p, h2) - y_ref).cwiseAbs().maxCoeff() < 1e-9);
    h = h2;
  }
}

TEST_CASE("sequence evaluation matches streaming cell steps") {
  Rng rng(77);
  const GruParameters p = GruParameters::random_init(rng);
  std::vector<InputFrame> seq;
  for (int t = 0; t < 40; ++t) seq.push_back(random_frame(rng));

  HiddenState h = HiddenState::zero();
  MatX streamed(kGruOutputSize, seq.size());
  for (size_t t = 0; t < seq.size(); ++t) {
    h = gru_cell_step(p, seq[t], h);
    streamed.col(static_cast<Eigen::Index>(t)) = gru_output(p, h);
  }

  const SequenceResult inf = forward_sequence(p, seq, HiddenState::zero(), false);
  CHECK((inf.tau_hat - streamed).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((inf.h_final.h - h.h).cwiseAbs().maxCoeff() < 1e-12);

  const SequenceResult tr = forward_sequence(p, seq, HiddenState::zero(), true, 40);
  CHECK((tr.tau_hat - streamed).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(tr.cache.steps() == 40);
  CHECK(tr.cache.batch() == 1);

  SUBCASE("length one equals a single cell step") {
    const std::vector<InputFrame> one{seq[0]};
    const SequenceResult r1 = forward_sequence(p, one, HiddenState::zero(), false);
    const HiddenState hc = gru_cell_step(p, seq[0], HiddenState::zero());
    CHECK((r1.tau_hat.col(0) - gru_output(p, hc)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("training mode enforces the horizon") {
    CHECK_THROWS_AS((void)forward_sequence(p, seq, HiddenState::zero(), true, 100),
                    std::invalid_argument);
    CHECK_NOTHROW((void)forward_sequence(p, seq, HiddenState::zero(), false, 100));
    CHECK_THROWS_AS((void)forward_sequence(p, {}, HiddenState::zero(), false),
                    std::invalid_argument);
  }
}

TEST_CASE("hidden state stays strictly inside the unit box") {
  Rng rng(301);
  GruParameters p = GruParameters::random_init(rng);
  for (auto& v : tensor_views(p)) v *= 5.0;  // exaggerate to push toward saturation
  HiddenState h = HiddenState::zero();
  for (int t = 0; t < 200; ++t) {
    h = gru_cell_step(p, random_frame(rng), h);
    CHECK(h.h.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("perfect predictions give zero loss and zero gradients") {
  Rng rng(13);
  GruParameters p(kGruInputSize, 10, kGruOutputSize);
  // Quarter values survive the x100 / /100 round trip bit-exactly.
  for (int i = 0; i < kGruOutputSize; ++i) p.b_out[i] = 0.25 * (i - 3);

  std::vector<InputFrame> seq;
  for (int t = 0; t < 10; ++t) seq.push_back(random_frame(rng));
  const SequenceResult res = forward_sequence(p, seq, HiddenState::zero(10), true, 10);

  std::vector<MatX> targets;
  for (int t = 0; t < 10; ++t) targets.push_back(res.tau_hat.col(t));
  const BackwardResult back = backward_tbptt(p, res.cache, targets);
  CHECK(back.loss == 0.0);
  CHECK(max_abs_param_diff(back.grads, GruParameters(kGruInputSize, 10, kGruOutputSize)) == 0.0);
}

TEST_CASE("single-step output-layer gradient matches its closed form") {
  Rng rng(29);
  const int hidden = 14;
  const GruParameters p = GruParameters::random_init(rng, kGruInputSize, hidden, kGruOutputSize);
  const std::vector<InputFrame> seq{random_frame(rng)};
  const SequenceResult res = forward_sequence(p, seq, HiddenState::zero(hidden), true, 1);

  MatX target(kGruOutputSize, 1);
  for (int i = 0; i < kGruOutputSize; ++i) target(i, 0) = rng.uniform(-80.0, 80.0);
  const BackwardResult back = backward_tbptt(p, res.cache, {target});

  // With one step and one sample, dL/dW_out = (2/m) (y - t_scaled) h^T in the
  // scaled head space, m = number of output elements.
  const VecX h1 = res.cache.h_last.col(0);
  const VecX y = p.w_out * h1 + p.b_out;
  const VecX delta = y - target.col(0) / kOutputScaleNm;
  const double m = static_cast<double>(kGruOutputSize);
  const MatX dw_expected = (2.0 / m) * delta * h1.transpose();

  CHECK((back.grads.w_out - dw_expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((back.grads.b_out - (2.0 / m) * delta).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(back.loss == doctest::Approx(delta.squaredNorm() / m).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
  Rng rng(97);
  GruParameters p = GruParameters::random_init(rng);
  const int steps = 10, batch = 2;

  std::vector<MatX> x_cols(steps);
  std::vector<MatX> targets(steps);
  for (int t = 0; t < steps; ++t) {
    x_cols[t] = MatX::NullaryExpr(kGruInputSize, batch,
                                  [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1.0, 1.0); });
    targets[t] = MatX::NullaryExpr(kGruOutputSize, batch,
                                   [&](Eigen::Index, Eigen::Index) { return rng.uniform(-60.0, 60.0); });
  }
  const MatX h0 = MatX::NullaryExpr(kGruHiddenSize, batch,
                                    [&](Eigen::Index, Eigen::Index) { return rng.uniform(-0.5, 0.5); });
  VecX weights(kGruOutputSize);
  weights << 1.0, 0.5, 2.0, 1.5, 0.25, 1.0;

  const auto loss_of = [&](const GruParameters& q) {
    ForwardCache cache;
    (void)forward_cols(q, x_cols, h0, &cache);
    double loss = 0.0;
    const double m = static_cast<double>(batch) * steps * kGruOutputSize;
    for (int t = 0; t < steps; ++t) {
      const MatX& h_t = (t + 1 < steps) ? cache.h_prev[t + 1] : cache.h_last;
      const MatX y = (q.w_out * h_t).colwise() + q.b_out;
      const MatX d = y - targets[t] / kOutputScaleNm;
      loss += (d.array().square().colwise() * weights.array()).sum() / m;
    }
    return loss;
  };

  ForwardCache cache;
  (void)forward_cols(p, x_cols, h0, &cache);
  const BackwardResult back = backward_tbptt(p, cache, targets, weights);
  CHECK(back.loss == doctest::Approx(loss_of(p)).epsilon(1e-12));

  auto views = tensor_views(p);
  const auto grad_views = tensor_views(const_cast<const GruParameters&>(back.grads));
  const double fd_step = 1e-5;
  int checked = 0;
  double worst_rel = 0.0;
  for (int s = 0; s < 220; ++s) {
    const auto ti = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(views.size()) - 1));
    const auto ci = static_cast<Eigen::Index>(
        rng.uniform_int(0, static_cast<int>(views[ti].size()) - 1));
    const double saved = views[ti][ci];
    views[ti][ci] = saved + fd_step;
    const double lp = loss_of(p);
    views[ti][ci] = saved - fd_step;
    const double lm = loss_of(p);
    views[ti][ci] = saved;

    const double fd = (lp - lm) / (2.0 * fd_step);
    const double an = grad_views[ti][ci];
    const double rel = std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an));
    worst_rel = std::max(worst_rel, rel);
    ++checked;
  }
  INFO("worst relative gradient error ", worst_rel, " over ", checked, " coordinates");
  CHECK(worst_rel < 1e-4);
}

TEST_CASE("adam updates behave like the reference method") {
  SUBCASE("zero gradients leave parameters untouched") {
    Rng rng(5);
    GruParameters p = GruParameters::random_init(rng, kGruInputSize, 6, kGruOutputSize);
    const GruParameters before = p;
    AdamState opt(kGruInputSize, 6, kGruOutputSize);
    adam_update(opt, p, GruParameters(kGruInputSize, 6, kGruOutputSize), 1e-3);
    CHECK(max_abs_param_diff(p, before) == 0.0);
    CHECK(opt.step_count == 1);
  }

  SUBCASE("the first step moves each coordinate by about -lr * sign(grad)") {
    Rng rng(6);
    GruParameters p = GruParameters::random_init(rng, kGruInputSize, 6, kGruOutputSize);
    const GruParameters before = p;
    GruParameters g(kGruInputSize, 6, kGruOutputSize);
    for (auto& v : tensor_views(g))
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-2.0, 2.0);

    AdamState opt(kGruInputSize, 6, kGruOutputSize);
    const double lr = 1e-3;
    adam_update(opt, p, g, lr);

    const auto pb = tensor_views(const_cast<const GruParameters&>(before));
    const auto pa = tensor_views(const_cast<const GruParameters&>(p));
    const auto gv = tensor_views(const_cast<const GruParameters&>(g));
    for (size_t t = 0; t < pa.size(); ++t)
      for (Eigen::Index i = 0; i < pa[t].size(); ++i) {
        if (std::abs(gv[t][i]) < 1e-3) continue;
        const double step = pa[t][i] - pb[t][i];
        CHECK(step == doctest::Approx(-lr * (gv[t][i] > 0 ? 1.0 : -1.0)).epsilon(1e-4));
      }
  }

  SUBCASE("descent on a quadratic converges to its minimum") {
    GruParameters p(1, 1, 1);  // use b_out as the lone optimized scalar
    AdamState opt(1, 1, 1);
    for (int it = 0; it < 150; ++it) {
      GruParameters g(1, 1, 1);
      g.b_out[0] = 2.0 * (p.b_out[0] - 3.0);
      adam_update(opt, p, g, 0.1);
    }
    CHECK(std::abs(p.b_out[0] - 3.0) < 0.5);
  }

  SUBCASE("non-positive learning rates are rejected") {
    GruParameters p(1, 1, 1);
    AdamState opt(1, 1, 1);
    CHECK_THROWS_AS(adam_update(opt, p, GruParameters(1, 1, 1), 0.0), std::invalid_argument);
  }
}

TEST_CASE("learning-rate schedule decays linearly then holds") {
  CHECK(lr_at_epoch(0) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at_epoch(50) == doctest::Approx(5.05e-5).epsilon(1e-9));
  CHECK(lr_at_epoch(100) == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK(lr_at_epoch(150) == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK(lr_at_epoch(199) == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK_THROWS_AS((void)lr_at_epoch(-1), std::out_of_range);
  CHECK_THROWS_AS((void)lr_at_epoch(200), std::out_of_range);
  CHECK_THROWS_AS((void)lr_at_epoch(0, 0), std::out_of_range);
}

TEST_CASE("weights files round-trip bit-for-bit") {
  Rng rng(501);
  const GruParameters p = GruParameters::random_init(rng, kGruInputSize, 17, kGruOutputSize);
  const auto path = temp_weights_path("proprio_gru_roundtrip.bin");
  save_gru_weights(p, path.string());

  const GruParameters q =
      load_gru_weights(path.string(), GruShape{kGruInputSize, 17, kGruOutputSize});
  const auto vp = tensor_views(const_cast<const GruParameters&>(p));
  const auto vq = tensor_views(const_cast<const GruParameters&>(q));
  for (size_t i = 0; i < vp.size(); ++i)
    for (Eigen::Index j = 0; j < vp[i].size(); ++j) CHECK(vp[i][j] == vq[i][j]);

  SUBCASE("shape expectations are enforced with both values named") {
    try {
      (void)load_gru_weights(path.string());  // defaults expect hidden = 150
      FAIL("expected a shape mismatch error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("hidden") != std::string::npos);
      CHECK(msg.find("17") != std::string::npos);
      CHECK(msg.find("150") != std::string::npos);
    }
    CHECK_NOTHROW((void)load_gru_weights(path.string(), std::nullopt));
  }

  SUBCASE("truncated payloads are reported") {
    const auto cut = temp_weights_path("proprio_gru_truncated.bin");
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
    out.close();
    try {
      (void)load_gru_weights(cut.string(), std::nullopt);
      FAIL("expected a truncation error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "unexpected end of weights payload");
    }
  }

  SUBCASE("bad magic and trailing bytes are rejected") {
    const auto junk = temp_weights_path("proprio_gru_junk.bin");
    {
      std::ofstream out(junk, std::ios::binary);
      out.write("NOPE", 4);
      const std::uint32_t rest[4] = {1, 24, 17, 6};
      out.write(reinterpret_cast<const char*>(rest), sizeof rest);
    }
    CHECK_THROWS_WITH((void)load_gru_weights(junk.string(), std::nullopt),
                      "not a GRU weights file (bad magic)");

    const auto padded = temp_weights_path("proprio_gru_padded.bin");
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(padded, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.put('\0');
    out.close();
    CHECK_THROWS_WITH((void)load_gru_weights(padded.string(), std::nullopt),
                      "trailing data after weights payload");
  }
}

TEST_CASE("single-precision inference tracks the double-precision network") {
  Rng rng(601);
  const GruParameters p = GruParameters::random_init(rng);
  const GruF32 pf = to_f32(p);

  HiddenState h64 = HiddenState::zero();
  Eigen::VectorXf h32 = Eigen::VectorXf::Zero(kGruHiddenSize);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const InputFrame frame = random_frame(rng);
    h64 = gru_cell_step(p, frame, h64);
    const VecX y64 = gru_output(p, h64);
    const Eigen::VectorXf y32 = gru_step_f32(pf, frame, h32);
    for (int i = 0; i < kGruOutputSize; ++i) {
      const double rel = std::abs(y32[i] - y64[i]) / (1.0 + std::abs(y64[i]));
      worst = std::max(worst, rel);
    }
  }
  INFO("worst f32-vs-f64 relative output deviation ", worst);
  CHECK(worst < 5e-5);  // measured ~3e-6 over 100 steps; order-of-magnitude headroom
  CHECK(h32.cwiseAbs().maxCoeff() < 1.0f);
}

TEST_CASE("one cell step plus output evaluates quickly") {
  Rng rng(701);
  const GruParameters p = GruParameters::random_init(rng);
  const GruF32 pf = to_f32(p);
  Eigen::VectorXf h = Eigen::VectorXf::Zero(kGruHiddenSize);
  const InputFrame frame = random_frame(rng);

  (void)gru_step_f32(pf, frame, h);  // warm-up
  const int reps = 200;
  const auto t0 = std::chrono::steady_clock::now();
  float sink = 0.0f;
  for (int i = 0; i < reps; ++i) sink += gru_step_f32(pf, frame, h)[0];
  const auto t1 = std::chrono::steady_clock::now();
  const double us =
      std::chrono::duration<double, std::micro>(t1 - t0).count() / reps;
  INFO("mean cell+output time ", us, " us (sink ", sink, ")");
  CHECK(us < 2000.0);  // generous bound; the acceptance battery pins 100 us
}
