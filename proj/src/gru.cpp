#include "proprio/gru.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace proprio {

namespace {

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& a) {
  // exp overflow saturates to inf and the quotient to 0/1, the exact limits.
  return ((-a).exp() + 1.0).inverse();
}

void check_hidden(const GruParameters& p, const Eigen::Index rows) {
  if (rows != p.hidden_size())
    throw std::invalid_argument("hidden state size does not match the network");
}

}  // namespace

VecX InputFrame::flatten() const {
  VecX flat(kGruInputSize);
  flat << q_leg, qdot_leg, tau_d_leg, pelvis_ang_vel, pelvis_lin_acc;
  return flat;
}

VecX standard_input_scale() {
  VecX s(kGruInputSize);
  s.segment(0, 6).setConstant(1.0);    // joint angles, rad
  s.segment(6, 6).setConstant(4.0);    // joint rates, rad/s
  s.segment(12, 6).setConstant(100.0); // commanded torque, N*m
  s.segment(18, 3).setConstant(2.0);   // pelvis angular velocity, rad/s
  s.segment(21, 3).setConstant(10.0);  // pelvis linear acceleration, m/s^2
  return s;
}

VecX scaled_input(const InputFrame& frame) {
  const VecX flat = frame.flatten();
  if (!flat.allFinite())
    throw std::invalid_argument("input frame contains non-finite entries");
  return flat.cwiseQuotient(standard_input_scale());
}

GruParameters::GruParameters(int input, int hidden, int output)
    : wz(MatX::Zero(hidden, input)),
      wr(MatX::Zero(hidden, input)),
      wn(MatX::Zero(hidden, input)),
      uz(MatX::Zero(hidden, hidden)),
      ur(MatX::Zero(hidden, hidden)),
      un(MatX::Zero(hidden, hidden)),
      bz_in(VecX::Zero(hidden)),
      br_in(VecX::Zero(hidden)),
      bn_in(VecX::Zero(hidden)),
      bz_rec(VecX::Zero(hidden)),
      br_rec(VecX::Zero(hidden)),
      bn_rec(VecX::Zero(hidden)),
      w_out(MatX::Zero(output, hidden)),
      b_out(VecX::Zero(output)) {
  if (input < 1 || hidden < 1 || output < 1)
    throw std::invalid_argument("network sizes must be positive");
}

GruParameters GruParameters::random_init(Rng& rng, int input, int hidden, int output) {
  GruParameters p(input, hidden, output);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& view : tensor_views(p))
    for (Eigen::Index i = 0; i < view.size(); ++i) view[i] = rng.uniform(-bound, bound);
  return p;
}

std::vector<Eigen::Map<Eigen::ArrayXd>> tensor_views(GruParameters& p) {
  std::vector<Eigen::Map<Eigen::ArrayXd>> v;
  v.reserve(14);
  for (MatX* m : {&p.wz, &p.wr, &p.wn, &p.uz, &p.ur, &p.un})
    v.emplace_back(m->data(), m->size());
  for (VecX* b : {&p.bz_in, &p.br_in, &p.bn_in, &p.bz_rec, &p.br_rec, &p.bn_rec})
    v.emplace_back(b->data(), b->size());
  v.emplace_back(p.w_out.data(), p.w_out.size());
  v.emplace_back(p.b_out.data(), p.b_out.size());
  return v;
}

std::vector<Eigen::Map<const Eigen::ArrayXd>> tensor_views(const GruParameters& p) {
  std::vector<Eigen::Map<const Eigen::ArrayXd>> v;
  v.reserve(14);
  for (const MatX* m : {&p.wz, &p.wr, &p.wn, &p.uz, &p.ur, &p.un})
    v.emplace_back(m->data(), m->size());
  for (const VecX* b : {&p.bz_in, &p.br_in, &p.bn_in, &p.bz_rec, &p.br_rec, &p.bn_rec})
    v.emplace_back(b->data(), b->size());
  v.emplace_back(p.w_out.data(), p.w_out.size());
  v.emplace_back(p.b_out.data(), p.b_out.size());
  return v;
}

namespace {

// One batched cell update; all matrices are hidden x batch except x.
void core_step(const GruParameters& p, const MatX& x, const MatX& h_prev, MatX& z,
               MatX& r, MatX& n, MatX& k, MatX& h_out) {
  const MatX az = ((p.wz * x + p.uz * h_prev).colwise() + (p.bz_in + p.bz_rec));
  const MatX ar = ((p.wr * x + p.ur * h_prev).colwise() + (p.br_in + p.br_rec));
  z = sigmoid(az.array()).matrix();
  r = sigmoid(ar.array()).matrix();
  k = (p.un * h_prev).colwise() + p.bn_rec;
  const MatX an =
      (((p.wn * x).colwise() + p.bn_in).array() + r.array() * k.array()).matrix();
  n = an.array().tanh().matrix();
  h_out = ((1.0 - z.array()) * n.array() + z.array() * h_prev.array()).matrix();
}

}  // namespace

HiddenState gru_cell_step(const GruParameters& p, const InputFrame& x,
                          const HiddenState& h_prev) {
  if (p.input_size() != kGruInputSize)
    throw std::invalid_argument("gru_cell_step: network does not take standard frames");
  check_hidden(p, h_prev.h.size());
  MatX z, r, n, k, h;
  core_step(p, scaled_input(x), h_prev.h, z, r, n, k, h);
  return {VecX(h.col(0))};
}

VecX gru_output(const GruParameters& p, const HiddenState& h) {
  check_hidden(p, h.h.size());
  return kOutputScaleNm * (p.w_out * h.h + p.b_out);
}

std::vector<MatX> forward_cols(const GruParameters& p, const std::vector<MatX>& x_cols,
                               const MatX& h0, ForwardCache* cache, MatX* h_final) {
  if (x_cols.empty()) throw std::invalid_argument("forward_cols: empty sequence");
  check_hidden(p, h0.rows());
  const int steps = static_cast<int>(x_cols.size());
  if (cache) {
    cache->x.resize(steps);
    cache->h_prev.resize(steps);
    cache->z.resize(steps);
    cache->r.resize(steps);
    cache->n.resize(steps);
    cache->k.resize(steps);
  }
  std::vector<MatX> outputs(steps);
  MatX h = h0, z, r, n, k, h_next;
  for (int t = 0; t < steps; ++t) {
    if (x_cols[t].rows() != p.input_size() || x_cols[t].cols() != h0.cols())
      throw std::invalid_argument("forward_cols: input block has wrong shape");
    core_step(p, x_cols[t], h, z, r, n, k, h_next);
    if (cache) {
      cache->x[t] = x_cols[t];
      cache->h_prev[t] = h;
      cache->z[t] = z;
      cache->r[t] = r;
      cache->n[t] = n;
      cache->k[t] = k;
    }
    h = h_next;
    outputs[t] = kOutputScaleNm * ((p.w_out * h).colwise() + p.b_out);
  }
  if (cache) cache->h_last = h;
  if (h_final) *h_final = h;
  return outputs;
}

SequenceResult forward_sequence(const GruParameters& p, const std::vector<InputFrame>& seq,
                                const HiddenState& h0, bool training_mode, int horizon) {
  if (p.input_size() != kGruInputSize)
    throw std::invalid_argument("forward_sequence: network does not take standard frames");
  if (seq.empty()) throw std::invalid_argument("forward_sequence: empty sequence");
  if (training_mode && static_cast<int>(seq.size()) != horizon)
    throw std::invalid_argument("forward_sequence: training mode requires exactly " +
                                std::to_string(horizon) + " steps, got " +
                                std::to_string(seq.size()));

  std::vector<MatX> cols(seq.size());
  for (size_t i = 0; i < seq.size(); ++i) cols[i] = scaled_input(seq[i]);

  SequenceResult res;
  MatX h_final;
  const std::vector<MatX> outs =
      forward_cols(p, cols, h0.h, training_mode ? &res.cache : nullptr, &h_final);
  res.tau_hat.resize(p.output_size(), static_cast<Eigen::Index>(seq.size()));
  for (size_t t = 0; t < outs.size(); ++t) res.tau_hat.col(t) = outs[t].col(0);
  res.h_final = {VecX(h_final.col(0))};
  return res;
}

BackwardResult backward_tbptt(const GruParameters& p, const ForwardCache& cache,
                              const std::vector<MatX>& targets,
                              const VecX& loss_weights) {
  const int steps = cache.steps();
  if (steps == 0) throw std::invalid_argument("backward_tbptt: empty cache");
  if (static_cast<int>(targets.size()) != steps)
    throw std::invalid_argument("backward_tbptt: cache and target lengths differ");
  const int batch = cache.batch();
  const int out = p.output_size();
  VecX w = loss_weights.size() == 0 ? VecX::Ones(out) : loss_weights;
  if (w.size() != out)
    throw std::invalid_argument("backward_tbptt: loss_weights has wrong size");

  BackwardResult res{GruParameters(p.input_size(), p.hidden_size(), out), 0.0};
  GruParameters& g = res.grads;
  const double m = static_cast<double>(batch) * steps * out;

  MatX dh = MatX::Zero(p.hidden_size(), batch);
  for (int t = steps - 1; t >= 0; --t) {
    if (targets[t].rows() != out || targets[t].cols() != batch)
      throw std::invalid_argument("backward_tbptt: target block has wrong shape");
    const MatX& h_t = (t + 1 < steps) ? cache.h_prev[t + 1] : cache.h_last;

    // Output head in scaled space.
    const MatX y = (p.w_out * h_t).colwise() + p.b_out;
    const MatX delta = y - targets[t] / kOutputScaleNm;
    res.loss += (delta.array().square().colwise() * w.array()).sum() / m;
    const MatX dy = (2.0 / m) * (delta.array().colwise() * w.array()).matrix();

    g.w_out += dy * h_t.transpose();
    g.b_out += dy.rowwise().sum();
    dh += p.w_out.transpose() * dy;

    // Gate backflow.
    const MatX& z = cache.z[t];
    const MatX& r = cache.r[t];
    const MatX& n = cache.n[t];
    const MatX& k = cache.k[t];
    const MatX& h_prev = cache.h_prev[t];
    const MatX& x = cache.x[t];

    const MatX dz = (dh.array() * (h_prev.array() - n.array())).matrix();
    const MatX dn = (dh.array() * (1.0 - z.array())).matrix();
    const MatX dan = (dn.array() * (1.0 - n.array().square())).matrix();
    const MatX dk = (dan.array() * r.array()).matrix();
    const MatX dr = (dan.array() * k.array()).matrix();
    const MatX daz = (dz.array() * z.array() * (1.0 - z.array())).matrix();
    const MatX dar = (dr.array() * r.array() * (1.0 - r.array())).matrix();

    g.wz += daz * x.transpose();
    g.wr += dar * x.transpose();
    g.wn += dan * x.transpose();
    g.uz += daz * h_prev.transpose();
    g.ur += dar * h_prev.transpose();
    g.un += dk * h_prev.transpose();
    g.bz_in += daz.rowwise().sum();
    g.br_in += dar.rowwise().sum();
    g.bn_in += dan.rowwise().sum();
    g.bz_rec += daz.rowwise().sum();
    g.br_rec += dar.rowwise().sum();
    g.bn_rec += dk.rowwise().sum();

    dh = (dh.array() * z.array()).matrix() + p.uz.transpose() * daz +
         p.ur.transpose() * dar + p.un.transpose() * dk;
  }
  return res;
}

void adam_update(AdamState& opt, GruParameters& params, const GruParameters& grads,
                 double lr) {
  if (lr <= 0.0) throw std::invalid_argument("adam_update: lr must be positive");
  opt.step_count += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));

  auto pv = tensor_views(params);
  const auto gv = tensor_views(grads);
  auto mv = tensor_views(opt.first_moment);
  auto vv = tensor_views(opt.second_moment);
  for (size_t i = 0; i < pv.size(); ++i) {
    if (pv[i].size() != gv[i].size())
      throw std::invalid_argument("adam_update: gradient shapes do not match parameters");
    mv[i] = opt.beta1 * mv[i] + (1.0 - opt.beta1) * gv[i];
    vv[i] = opt.beta2 * vv[i] + (1.0 - opt.beta2) * gv[i].square();
    pv[i] -= lr * (mv[i] / bc1) / ((vv[i] / bc2).sqrt() + opt.epsilon);
  }
}

double lr_at_epoch(int epoch, int total_epochs, double lr0) {
  if (total_epochs < 1) throw std::out_of_range("lr_at_epoch: total_epochs must be >= 1");
  if (epoch < 0 || epoch >= total_epochs)
    throw std::out_of_range("lr_at_epoch: epoch out of range");
  const int half = total_epochs / 2;
  if (epoch >= half) return 0.01 * lr0;
  return lr0 * (1.0 - 0.99 * static_cast<double>(epoch) / static_cast<double>(half));
}

namespace {

constexpr char kMagic[4] = {'G', 'R', 'U', 'W'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);  // little-endian host
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error("unexpected end of weights payload");
  return v;
}

void write_tensor_row_major(std::ofstream& out, const MatX& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

void read_tensor_row_major(std::ifstream& in, MatX& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw std::runtime_error("unexpected end of weights payload");
      m(i, j) = v;
    }
}

}  // namespace

void save_gru_weights(const GruParameters& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open weights file for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(p.input_size()));
  write_u32(out, static_cast<std::uint32_t>(p.hidden_size()));
  write_u32(out, static_cast<std::uint32_t>(p.output_size()));

  const MatX* mats[] = {&p.wz, &p.wr, &p.wn, &p.uz, &p.ur, &p.un};
  for (const MatX* m : mats) write_tensor_row_major(out, *m);
  const VecX* vecs[] = {&p.bz_in, &p.br_in, &p.bn_in, &p.bz_rec, &p.br_rec, &p.bn_rec};
  for (const VecX* b : vecs)
    out.write(reinterpret_cast<const char*>(b->data()),
              static_cast<std::streamsize>(b->size() * sizeof(double)));
  write_tensor_row_major(out, p.w_out);
  out.write(reinterpret_cast<const char*>(p.b_out.data()),
            static_cast<std::streamsize>(p.b_out.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing weights file: " + path);
}

GruParameters load_gru_weights(const std::string& path, std::optional<GruShape> expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file: " + path);

  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a GRU weights file (bad magic)");
  const std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported GRU weights version " + std::to_string(version));
  const int input = static_cast<int>(read_u32(in));
  const int hidden = static_cast<int>(read_u32(in));
  const int output = static_cast<int>(read_u32(in));
  if (expect) {
    const auto mismatch = [](const char* name, int got, int want) {
      throw std::runtime_error("weights file " + std::string(name) + " size " +
                               std::to_string(got) + " does not match expected " +
                               std::to_string(want));
    };
    if (input != expect->input) mismatch("input", input, expect->input);
    if (hidden != expect->hidden) mismatch("hidden", hidden, expect->hidden);
    if (output != expect->output) mismatch("output", output, expect->output);
  }
  if (input < 1 || hidden < 1 || output < 1)
    throw std::runtime_error("weights file declares non-positive sizes");

  GruParameters p(input, hidden, output);
  MatX* mats[] = {&p.wz, &p.wr, &p.wn, &p.uz, &p.ur, &p.un};
  for (MatX* m : mats) read_tensor_row_major(in, *m);
  VecX* vecs[] = {&p.bz_in, &p.br_in, &p.bn_in, &p.bz_rec, &p.br_rec, &p.bn_rec};
  for (VecX* b : vecs)
    if (!in.read(reinterpret_cast<char*>(b->data()),
                 static_cast<std::streamsize>(b->size() * sizeof(double))))
      throw std::runtime_error("unexpected end of weights payload");
  read_tensor_row_major(in, p.w_out);
  if (!in.read(reinterpret_cast<char*>(p.b_out.data()),
               static_cast<std::streamsize>(p.b_out.size() * sizeof(double))))
    throw std::runtime_error("unexpected end of weights payload");

  // A well-formed file ends exactly here.
  char extra = 0;
  if (in.read(&extra, 1))
    throw std::runtime_error("trailing data after weights payload");
  return p;
}

GruF32 to_f32(const GruParameters& p) {
  GruF32 f;
  f.wz = p.wz.cast<float>();
  f.wr = p.wr.cast<float>();
  f.wn = p.wn.cast<float>();
  f.uz = p.uz.cast<float>();
  f.ur = p.ur.cast<float>();
  f.un = p.un.cast<float>();
  f.bz = (p.bz_in + p.bz_rec).cast<float>();
  f.br = (p.br_in + p.br_rec).cast<float>();
  f.bn_in = p.bn_in.cast<float>();
  f.bn_rec = p.bn_rec.cast<float>();
  f.w_out = p.w_out.cast<float>();
  f.b_out = p.b_out.cast<float>();
  f.input_scale_inv = p.input_size() == kGruInputSize
                          ? standard_input_scale().cwiseInverse().cast<float>().eval()
                          : Eigen::VectorXf::Ones(p.input_size());
  return f;
}

Eigen::VectorXf gru_step_f32(const GruF32& p, const InputFrame& x, Eigen::VectorXf& h) {
  if (h.size() != p.uz.rows())
    throw std::invalid_argument("gru_step_f32: hidden state size mismatch");
  const Eigen::VectorXf xf =
      (x.flatten().cast<float>().array() * p.input_scale_inv.array()).matrix();
  const Eigen::ArrayXf az = (p.wz * xf + p.uz * h + p.bz).array();
  const Eigen::ArrayXf ar = (p.wr * xf + p.ur * h + p.br).array();
  const Eigen::ArrayXf z = ((-az).exp() + 1.0f).inverse();
  const Eigen::ArrayXf r = ((-ar).exp() + 1.0f).inverse();
  const Eigen::ArrayXf k = (p.un * h + p.bn_rec).array();
  const Eigen::ArrayXf n = ((p.wn * xf + p.bn_in).array() + r * k).tanh();
  h = ((1.0f - z) * n + z * h.array()).matrix();
  return static_cast<float>(kOutputScaleNm) * (p.w_out * h + p.b_out);
}

}  // namespace proprio
