#include "mmgrip/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mmgrip {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMap = Eigen::Map<const MatrixXd>;
using MutMap = Eigen::Map<MatrixXd>;

// Columns t..t+T_out-1 of the k-tap receptive field stacked channel-major.
MatrixXd im2col(const MatrixXd& x, int k) {
  const Index channels = x.rows();
  const Index out_len = x.cols() - k + 1;
  MatrixXd col(channels * k, out_len);
  for (Index c = 0; c < channels; ++c) {
    for (int j = 0; j < k; ++j) col.row(c * k + j) = x.block(c, j, 1, out_len);
  }
  return col;
}

MatrixXd col2im(const MatrixXd& dcol, Index channels, int k) {
  const Index out_len = dcol.cols();
  MatrixXd dx = MatrixXd::Zero(channels, out_len + k - 1);
  for (Index c = 0; c < channels; ++c) {
    for (int j = 0; j < k; ++j) dx.block(c, j, 1, out_len) += dcol.row(c * k + j);
  }
  return dx;
}

struct Pooled {
  MatrixXd out;
  Eigen::MatrixXi arg;
};

Pooled maxpool2(const MatrixXd& a) {
  const Index p = a.cols() / 2;
  Pooled r{MatrixXd(a.rows(), p), Eigen::MatrixXi(a.rows(), p)};
  for (Index c = 0; c < a.rows(); ++c) {
    for (Index i = 0; i < p; ++i) {
      const bool first = a(c, 2 * i) >= a(c, 2 * i + 1);
      r.arg(c, i) = static_cast<int>(first ? 2 * i : 2 * i + 1);
      r.out(c, i) = a(c, r.arg(c, i));
    }
  }
  return r;
}

MatrixXd unpool2(const MatrixXd& d, const Eigen::MatrixXi& arg, Index width) {
  MatrixXd out = MatrixXd::Zero(d.rows(), width);
  for (Index c = 0; c < d.rows(); ++c) {
    for (Index i = 0; i < d.cols(); ++i) out(c, arg(c, i)) += d(c, i);
  }
  return out;
}

MatrixXd relu(const MatrixXd& z) { return z.cwiseMax(0.0); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MatrixXd sigmoid(const MatrixXd& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void uniform_fill(Eigen::Ref<VectorXd> v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Index i = 0; i < v.size(); ++i) v(i) = u(rng);
}

// The volatile keeps gcc 11 -O3 from vectorising adjacent round trips into a no-op.
double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return f;
}

void round_f32(VectorXd& v) { v = v.unaryExpr([](double x) { return to_f32(x); }); }

// Offsets of each tensor inside the classifier's flat parameter vector.
struct ClassifierLayout {
  Index w1, b1, w2, b2, wo, bo, total;
  explicit ClassifierLayout(const ClassifierArch& a) {
    w1 = 0;
    b1 = w1 + static_cast<Index>(a.c1) * a.n_coeffs * a.kernel;
    w2 = b1 + a.c1;
    b2 = w2 + static_cast<Index>(a.c2) * a.c1 * a.kernel;
    wo = b2 + a.c2;
    bo = wo + static_cast<Index>(a.n_classes) * a.c2;
    total = bo + a.n_classes;
  }
};

struct PredictorLayout {
  Index wz, wr, wh, uz, ur, uh, bz, br, bh, ws, bs, wo, bo, total;
  explicit PredictorLayout(const PredictorArch& a) {
    const Index hd = static_cast<Index>(a.hidden) * a.input_dim;
    const Index hh = static_cast<Index>(a.hidden) * a.hidden;
    wz = 0;
    wr = wz + hd;
    wh = wr + hd;
    uz = wh + hd;
    ur = uz + hh;
    uh = ur + hh;
    bz = uh + hh;
    br = bz + a.hidden;
    bh = br + a.hidden;
    ws = bh + a.hidden;
    bs = ws + a.hidden;
    wo = bs + 1;
    bo = wo + 3 * a.hidden;
    total = bo + 3;
  }
};

}  // namespace

VectorXd softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  VectorXd e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

// ---------------------------------------------------------------------------
// MaterialClassifier
// ---------------------------------------------------------------------------

Index ClassifierArch::param_count() const { return ClassifierLayout(*this).total; }

MaterialClassifier::MaterialClassifier(const ClassifierArch& arch, const MfccConfig& mfcc_cfg, std::uint64_t seed)
    : arch_(arch), mfcc_cfg_(mfcc_cfg) {
  if (arch.n_coeffs != mfcc_cfg.n_coeffs) throw std::invalid_argument("classifier/MFCC coefficient mismatch");
  const Index t1 = arch.n_frames - arch.kernel + 1;
  if (t1 < 2 || t1 / 2 - arch.kernel + 1 < 2) throw std::invalid_argument("too few frames for the classifier");
  const ClassifierLayout L(arch);
  params = VectorXd::Zero(L.total);
  std::mt19937_64 rng(seed);
  uniform_fill(params.segment(L.w1, L.b1 - L.w1), std::sqrt(6.0 / (arch.n_coeffs * arch.kernel)), rng);
  uniform_fill(params.segment(L.w2, L.b2 - L.w2), std::sqrt(6.0 / (arch.c1 * arch.kernel)), rng);
  uniform_fill(params.segment(L.wo, L.bo - L.wo), std::sqrt(6.0 / (arch.c2 + arch.n_classes)), rng);
  input_mean = VectorXd::Zero(arch.n_coeffs);
  input_scale = VectorXd::Ones(arch.n_coeffs);
}

MatrixXd MaterialClassifier::prepare(const MfccMatrix& m) const {
  if (!(m.config == mfcc_cfg_)) throw std::invalid_argument("MFCC config differs from the training config");
  if (m.frames.cols() != arch_.n_coeffs || m.frames.rows() != arch_.n_frames) {
    std::ostringstream msg;
    msg << "MFCC shape " << m.frames.rows() << "x" << m.frames.cols() << " does not match classifier input "
        << arch_.n_frames << "x" << arch_.n_coeffs;
    throw std::invalid_argument(msg.str());
  }
  MatrixXd x = m.frames.transpose();
  for (Index c = 0; c < x.rows(); ++c) {
    x.row(c) = (x.row(c).array() - input_mean(c)) / input_scale(c);
  }
  return x;
}

VectorXd MaterialClassifier::logits_prepared(const MatrixXd& x) const {
  const ClassifierLayout L(arch_);
  const int k = arch_.kernel;
  ConstMap w1(params.data() + L.w1, arch_.c1, static_cast<Index>(arch_.n_coeffs) * k);
  ConstMap w2(params.data() + L.w2, arch_.c2, static_cast<Index>(arch_.c1) * k);
  ConstMap wo(params.data() + L.wo, arch_.n_classes, arch_.c2);
  const auto b1 = params.segment(L.b1, arch_.c1);
  const auto b2 = params.segment(L.b2, arch_.c2);
  const auto bo = params.segment(L.bo, arch_.n_classes);

  MatrixXd z1 = w1 * im2col(x, k);
  z1.colwise() += b1;
  const MatrixXd p1 = maxpool2(relu(z1)).out;
  MatrixXd z2 = w2 * im2col(p1, k);
  z2.colwise() += b2;
  const MatrixXd p2 = maxpool2(relu(z2)).out;
  const VectorXd g = p2.rowwise().mean();
  return wo * g + bo;
}

VectorXd MaterialClassifier::logits(const MfccMatrix& m) const { return logits_prepared(prepare(m)); }

Probabilities MaterialClassifier::classify(const MfccMatrix& m) const {
  const VectorXd p = softmax(logits(m));
  Probabilities out{};
  for (int i = 0; i < kNumMaterials; ++i) out[static_cast<std::size_t>(i)] = p(i);
  return out;
}

double MaterialClassifier::loss(const MatrixXd& x, int label, VectorXd* grad) const {
  const ClassifierLayout L(arch_);
  const int k = arch_.kernel;
  ConstMap w1(params.data() + L.w1, arch_.c1, static_cast<Index>(arch_.n_coeffs) * k);
  ConstMap w2(params.data() + L.w2, arch_.c2, static_cast<Index>(arch_.c1) * k);
  ConstMap wo(params.data() + L.wo, arch_.n_classes, arch_.c2);

  const MatrixXd col1 = im2col(x, k);
  MatrixXd z1 = w1 * col1;
  z1.colwise() += params.segment(L.b1, arch_.c1);
  const Pooled pool1 = maxpool2(relu(z1));
  const MatrixXd col2 = im2col(pool1.out, k);
  MatrixXd z2 = w2 * col2;
  z2.colwise() += params.segment(L.b2, arch_.c2);
  const Pooled pool2 = maxpool2(relu(z2));
  const VectorXd g = pool2.out.rowwise().mean();
  const VectorXd logit = wo * g + params.segment(L.bo, arch_.n_classes);

  const double m = logit.maxCoeff();
  const double lse = m + std::log((logit.array() - m).exp().sum());
  const double loss = lse - logit(label);
  if (grad == nullptr) return loss;

  VectorXd dlogit = (logit.array() - lse).exp().matrix();
  dlogit(label) -= 1.0;

  MutMap(grad->data() + L.wo, arch_.n_classes, arch_.c2) += dlogit * g.transpose();
  grad->segment(L.bo, arch_.n_classes) += dlogit;
  const VectorXd dg = wo.transpose() * dlogit;

  const Index p2 = pool2.out.cols();
  const MatrixXd dp2 = dg.replicate(1, p2) / static_cast<double>(p2);
  MatrixXd dz2 = unpool2(dp2, pool2.arg, z2.cols());
  dz2 = dz2.cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
  MutMap(grad->data() + L.w2, arch_.c2, static_cast<Index>(arch_.c1) * k) += dz2 * col2.transpose();
  grad->segment(L.b2, arch_.c2) += dz2.rowwise().sum();

  const MatrixXd dp1 = col2im(w2.transpose() * dz2, arch_.c1, k);
  MatrixXd dz1 = unpool2(dp1, pool1.arg, z1.cols());
  dz1 = dz1.cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
  MutMap(grad->data() + L.w1, arch_.c1, static_cast<Index>(arch_.n_coeffs) * k) += dz1 * col1.transpose();
  grad->segment(L.b1, arch_.c1) += dz1.rowwise().sum();
  return loss;
}

void MaterialClassifier::quantize_to_f32() {
  round_f32(params);
  round_f32(input_mean);
  round_f32(input_scale);
}

ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth/prediction length mismatch");
  ClassificationMetrics m;
  m.count = static_cast<int>(truth.size());
  int correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])] += 1;
    correct += truth[i] == predicted[i] ? 1 : 0;
  }
  m.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  for (std::size_t c = 0; c < kNumMaterials; ++c) {
    int row = 0, column = 0;
    for (std::size_t j = 0; j < kNumMaterials; ++j) {
      row += m.confusion[c][j];
      column += m.confusion[j][c];
    }
    m.recall[c] = row > 0 ? static_cast<double>(m.confusion[c][c]) / row : 0.0;
    m.precision[c] = column > 0 ? static_cast<double>(m.confusion[c][c]) / column : 0.0;
  }
  return m;
}

namespace {
int argmax(const Probabilities& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}
}  // namespace

ClassificationMetrics evaluate_classifier(const MaterialClassifier& model, const std::vector<LabeledMfcc>& data) {
  std::vector<int> truth, pred;
  truth.reserve(data.size());
  pred.reserve(data.size());
  for (const auto& ex : data) {
    truth.push_back(index_of(ex.label));
    pred.push_back(argmax(model.classify(ex.mfcc)));
  }
  return classification_metrics(truth, pred);
}

ClassifierTrainResult train_classifier(const std::vector<LabeledMfcc>& train, const std::vector<LabeledMfcc>& heldout,
                                       const ClassifierTrainConfig& cfg, const ClassifierArch& arch) {
  std::array<int, kNumMaterials> support{};
  for (const auto& ex : train) support[static_cast<std::size_t>(index_of(ex.label))]++;
  for (int c = 0; c < kNumMaterials; ++c) {
    if (support[static_cast<std::size_t>(c)] == 0) {
      throw std::invalid_argument("training set has no examples of class '" +
                                  std::string(to_string(material_from_index(c))) + "'");
    }
  }
  if (cfg.batch < 1 || cfg.epochs < 1) throw std::invalid_argument("batch and epochs must be positive");

  ClassifierTrainResult result;
  MaterialClassifier model(arch, train.front().mfcc.config, cfg.seed);

  // Per-coefficient standardisation over every training frame.
  VectorXd sum = VectorXd::Zero(arch.n_coeffs);
  VectorXd sq = VectorXd::Zero(arch.n_coeffs);
  double frames = 0.0;
  for (const auto& ex : train) {
    sum += ex.mfcc.frames.colwise().sum().transpose();
    sq += ex.mfcc.frames.array().square().matrix().colwise().sum().transpose();
    frames += static_cast<double>(ex.mfcc.frames.rows());
  }
  model.input_mean = sum / frames;
  model.input_scale = ((sq / frames).array() - model.input_mean.array().square()).max(0.0).sqrt().matrix();
  for (Index i = 0; i < model.input_scale.size(); ++i) {
    if (model.input_scale(i) < 1e-8) model.input_scale(i) = 1.0;
  }

  std::vector<MatrixXd> inputs;
  inputs.reserve(train.size());
  for (const auto& ex : train) inputs.push_back(model.prepare(ex.mfcc));

  auto mean_loss = [&]() {
    double acc = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) acc += model.loss(inputs[i], index_of(train[i].label), nullptr);
    return acc / static_cast<double>(inputs.size());
  };
  result.initial_loss = mean_loss();

  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5eed));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  VectorXd velocity = VectorXd::Zero(model.params.size());
  VectorXd grad(model.params.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      grad.setZero();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += model.loss(inputs[order[i]], index_of(train[order[i]].label), &grad);
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite classifier loss at epoch " << epoch << ", batch starting at sample " << start;
        throw std::runtime_error(msg.str());
      }
      epoch_loss += batch_loss;
      grad /= static_cast<double>(end - start);
      velocity = cfg.momentum * velocity - cfg.learning_rate * grad;
      model.params += velocity;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }

  model.quantize_to_f32();
  result.final_loss = mean_loss();
  result.heldout = heldout.empty() ? ClassificationMetrics{} : evaluate_classifier(model, heldout);
  result.model = std::move(model);
  return result;
}

void NearestCentroid::fit(const std::vector<LabeledMfcc>& train) {
  std::array<int, kNumMaterials> counts{};
  for (auto& c : centroids_) c = VectorXd();
  for (const auto& ex : train) {
    const auto k = static_cast<std::size_t>(index_of(ex.label));
    const VectorXd v = ex.mfcc.frames.colwise().mean().transpose();
    if (centroids_[k].size() == 0) centroids_[k] = VectorXd::Zero(v.size());
    centroids_[k] += v;
    counts[k]++;
  }
  for (std::size_t k = 0; k < kNumMaterials; ++k) {
    if (counts[k] == 0) throw std::invalid_argument("nearest-centroid fit is missing a class");
    centroids_[k] /= counts[k];
  }
}

int NearestCentroid::predict(const MfccMatrix& m) const {
  const VectorXd v = m.frames.colwise().mean().transpose();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kNumMaterials; ++k) {
    const double d = (centroids_[static_cast<std::size_t>(k)] - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

ClassificationMetrics NearestCentroid::evaluate(const std::vector<LabeledMfcc>& data) const {
  std::vector<int> truth, pred;
  for (const auto& ex : data) {
    truth.push_back(index_of(ex.label));
    pred.push_back(predict(ex.mfcc));
  }
  return classification_metrics(truth, pred);
}

// ---------------------------------------------------------------------------
// SlipPredictor
// ---------------------------------------------------------------------------

Index PredictorArch::param_count() const { return PredictorLayout(*this).total; }

SlipPredictor::SlipPredictor(const PredictorArch& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.input_dim < 1 || arch.hidden < 1 || arch.window < 2 || arch.horizon < 0) {
    throw std::invalid_argument("invalid predictor architecture");
  }
  const PredictorLayout L(arch);
  params.resize(L.total);
  std::mt19937_64 rng(seed);
  uniform_fill(params, 1.0 / std::sqrt(static_cast<double>(arch.hidden)), rng);
  feature_mean = VectorXd::Zero(arch.input_dim);
  feature_scale = VectorXd::Ones(arch.input_dim);
}

MatrixXd SlipPredictor::normalise(const MatrixXd& raw) const {
  return ((raw.colwise() - feature_mean).array().colwise() / feature_scale.array()).matrix();
}

namespace {

struct GruTrace {
  std::vector<MatrixXd> h;  // h[0] = initial state, h[t+1] after step t
  std::vector<MatrixXd> z, r, c;
  MatrixXd slip_logit;  // 1 x B
  MatrixXd out;         // 3 x B
};

GruTrace gru_forward(const PredictorArch& a, const VectorXd& p, const std::vector<MatrixXd>& steps) {
  const PredictorLayout L(a);
  const Index H = a.hidden, D = a.input_dim;
  ConstMap wz(p.data() + L.wz, H, D), wr(p.data() + L.wr, H, D), wh(p.data() + L.wh, H, D);
  ConstMap uz(p.data() + L.uz, H, H), ur(p.data() + L.ur, H, H), uh(p.data() + L.uh, H, H);
  const auto bz = p.segment(L.bz, H), br = p.segment(L.br, H), bh = p.segment(L.bh, H);
  ConstMap wo(p.data() + L.wo, 3, H);

  const Index B = steps.front().cols();
  GruTrace tr;
  tr.h.push_back(MatrixXd::Zero(H, B));
  for (const MatrixXd& x : steps) {
    const MatrixXd& hp = tr.h.back();
    MatrixXd az = wz * x + uz * hp;
    az.colwise() += bz;
    MatrixXd ar = wr * x + ur * hp;
    ar.colwise() += br;
    MatrixXd z = sigmoid(az);
    MatrixXd r = sigmoid(ar);
    MatrixXd ah = wh * x + uh * r.cwiseProduct(hp);
    ah.colwise() += bh;
    MatrixXd c = ah.array().tanh().matrix();
    MatrixXd h = hp + z.cwiseProduct(c - hp);
    tr.z.push_back(std::move(z));
    tr.r.push_back(std::move(r));
    tr.c.push_back(std::move(c));
    tr.h.push_back(std::move(h));
  }
  const MatrixXd& hl = tr.h.back();
  tr.slip_logit = p.segment(L.ws, H).transpose() * hl;
  tr.slip_logit.array() += p(L.bs);
  tr.out = wo * hl;
  tr.out.colwise() += p.segment(L.bo, 3);
  return tr;
}

}  // namespace

Prediction SlipPredictor::predict_raw(const MatrixXd& window) const {
  if (window.cols() != arch_.window || window.rows() != arch_.input_dim) {
    throw std::invalid_argument("feature window shape does not match the predictor");
  }
  const MatrixXd x = normalise(window);
  std::vector<MatrixXd> steps;
  steps.reserve(static_cast<std::size_t>(arch_.window));
  for (Index t = 0; t < x.cols(); ++t) steps.push_back(x.col(t));
  const GruTrace tr = gru_forward(arch_, params, steps);
  Prediction pr;
  pr.slip_prob = sigmoid(tr.slip_logit(0, 0));
  pr.force_value = tr.out(0, 0) * force_scale + force_mean;
  pr.cell.row = std::clamp(tr.out(1, 0) * (kGridRows - 1), 0.0, kGridRows - 1.0);
  pr.cell.col = std::clamp(tr.out(2, 0) * (kGridCols - 1), 0.0, kGridCols - 1.0);
  return pr;
}

Prediction SlipPredictor::predict(const FeatureWindow& window) const {
  if (static_cast<int>(window.vectors.size()) != arch_.window) {
    throw std::invalid_argument("window length " + std::to_string(window.vectors.size()) +
                                " does not match the trained length " + std::to_string(arch_.window));
  }
  MatrixXd raw(arch_.input_dim, arch_.window);
  for (int t = 0; t < arch_.window; ++t) {
    const auto a = window.vectors[static_cast<std::size_t>(t)].to_array();
    for (int d = 0; d < arch_.input_dim; ++d) raw(d, t) = a[static_cast<std::size_t>(d)];
  }
  return predict_raw(raw);
}

double SlipPredictor::loss(const std::vector<MatrixXd>& steps, const PredictorTargets& y, VectorXd* grad) const {
  if (static_cast<int>(steps.size()) != arch_.window) throw std::invalid_argument("window length mismatch");
  const PredictorLayout L(arch_);
  const Index H = arch_.hidden, D = arch_.input_dim;
  const GruTrace tr = gru_forward(arch_, params, steps);
  const Index B = steps.front().cols();
  const double inv_b = 1.0 / static_cast<double>(B);

  double loss = 0.0;
  Eigen::RowVectorXd ds(B);
  MatrixXd dout(3, B);
  for (Index b = 0; b < B; ++b) {
    const double s = tr.slip_logit(0, b);
    loss += softplus(s) - y.slip(b) * s;
    const double ef = tr.out(0, b) - y.force(b);
    const double er = tr.out(1, b) - y.row(b);
    const double ec = tr.out(2, b) - y.col(b);
    loss += ef * ef + 0.5 * (er * er + ec * ec);
    ds(b) = (sigmoid(s) - y.slip(b)) * inv_b;
    dout(0, b) = 2.0 * ef * inv_b;
    dout(1, b) = er * inv_b;
    dout(2, b) = ec * inv_b;
  }
  loss *= inv_b;
  if (grad == nullptr) return loss;

  VectorXd& g = *grad;
  ConstMap uz(params.data() + L.uz, H, H), ur(params.data() + L.ur, H, H), uh(params.data() + L.uh, H, H);
  ConstMap wo(params.data() + L.wo, 3, H);
  const MatrixXd& hl = tr.h.back();
  g.segment(L.ws, H) += hl * ds.transpose();
  g(L.bs) += ds.sum();
  MutMap(g.data() + L.wo, 3, H) += dout * hl.transpose();
  g.segment(L.bo, 3) += dout.rowwise().sum();
  MatrixXd dh = params.segment(L.ws, H) * ds + wo.transpose() * dout;

  MutMap dwz(g.data() + L.wz, H, D), dwr(g.data() + L.wr, H, D), dwh(g.data() + L.wh, H, D);
  MutMap duz(g.data() + L.uz, H, H), dur(g.data() + L.ur, H, H), duh(g.data() + L.uh, H, H);
  for (Index t = static_cast<Index>(steps.size()) - 1; t >= 0; --t) {
    const auto k = static_cast<std::size_t>(t);
    const MatrixXd& x = steps[k];
    const MatrixXd& hp = tr.h[k];
    const MatrixXd& z = tr.z[k];
    const MatrixXd& r = tr.r[k];
    const MatrixXd& c = tr.c[k];

    const MatrixXd dc = dh.cwiseProduct(z);
    const MatrixXd dz = dh.cwiseProduct(c - hp);
    MatrixXd dhp = dh - dh.cwiseProduct(z);

    const MatrixXd dah = dc.cwiseProduct((1.0 - c.array().square()).matrix());
    const MatrixXd rh = r.cwiseProduct(hp);
    dwh += dah * x.transpose();
    duh += dah * rh.transpose();
    g.segment(L.bh, H) += dah.rowwise().sum();
    const MatrixXd drh = uh.transpose() * dah;
    const MatrixXd dr = drh.cwiseProduct(hp);
    dhp += drh.cwiseProduct(r);

    const MatrixXd daz = dz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
    dwz += daz * x.transpose();
    duz += daz * hp.transpose();
    g.segment(L.bz, H) += daz.rowwise().sum();
    dhp += uz.transpose() * daz;

    const MatrixXd dar = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
    dwr += dar * x.transpose();
    dur += dar * hp.transpose();
    g.segment(L.br, H) += dar.rowwise().sum();
    dhp += ur.transpose() * dar;

    dh = std::move(dhp);
  }
  return loss;
}

void SlipPredictor::quantize_to_f32() {
  round_f32(params);
  round_f32(feature_mean);
  round_f32(feature_scale);
  force_mean = to_f32(force_mean);
  force_scale = to_f32(force_scale);
}

PredictorDataset build_predictor_dataset(const std::vector<TrialRecord>& trials, const PredictorArch& arch,
                                         int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  PredictorDataset ds;
  ds.arch = arch;
  for (const auto& rec : trials) {
    const auto feats = compute_features(rec.tactile);
    MatrixXd m(arch.input_dim, static_cast<Index>(feats.size()));
    for (std::size_t t = 0; t < feats.size(); ++t) {
      const auto a = feats[t].to_array();
      for (int d = 0; d < arch.input_dim; ++d) m(d, static_cast<Index>(t)) = a[static_cast<std::size_t>(d)];
    }
    const int trial = static_cast<int>(ds.features.size());
    const int n = static_cast<int>(feats.size());
    for (int end = arch.window - 1; end + arch.horizon < n; end += stride) ds.index.emplace_back(trial, end);
    ds.features.push_back(std::move(m));
    ds.truth.push_back(rec.truth);
    ds.trial_ids.push_back(rec.trial_id);
  }
  return ds;
}

namespace {

void gather_batch(const PredictorDataset& ds, const std::vector<MatrixXd>& normalised, const SlipPredictor& model,
                  const std::vector<std::size_t>& order, std::size_t start, std::size_t end,
                  std::vector<MatrixXd>& steps, PredictorTargets& y) {
  const PredictorArch& a = model.arch();
  const auto B = static_cast<Index>(end - start);
  steps.assign(static_cast<std::size_t>(a.window), MatrixXd(a.input_dim, B));
  y.slip.resize(B);
  y.force.resize(B);
  y.row.resize(B);
  y.col.resize(B);
  for (Index b = 0; b < B; ++b) {
    const auto [trial, last] = ds.index[order[start + static_cast<std::size_t>(b)]];
    const MatrixXd& f = normalised[static_cast<std::size_t>(trial)];
    for (int t = 0; t < a.window; ++t) {
      steps[static_cast<std::size_t>(t)].col(b) = f.col(last - a.window + 1 + t);
    }
    const StepTruth& target = ds.truth[static_cast<std::size_t>(trial)][static_cast<std::size_t>(last + a.horizon)];
    y.slip(b) = target.slip ? 1.0 : 0.0;
    y.force(b) = (target.max_force - model.force_mean) / model.force_scale;
    y.row(b) = target.max_cell.row / static_cast<double>(kGridRows - 1);
    y.col(b) = target.max_cell.col / static_cast<double>(kGridCols - 1);
  }
}

}  // namespace

PredictorTrainResult train_predictor(const PredictorDataset& train, const PredictorTrainConfig& cfg,
                                     const std::optional<SlipPredictor>& init) {
  if (train.size() == 0) throw std::invalid_argument("predictor training set is empty");
  if (cfg.batch < 1 || cfg.epochs < 0) throw std::invalid_argument("invalid predictor training config");

  PredictorTrainResult result;
  SlipPredictor model = init ? *init : SlipPredictor(train.arch, cfg.seed);
  if (!(model.arch() == train.arch)) throw std::invalid_argument("initial model architecture differs from dataset");

  if (!init) {
    const Index D = train.arch.input_dim;
    VectorXd sum = VectorXd::Zero(D), sq = VectorXd::Zero(D);
    double n = 0.0;
    for (const auto& f : train.features) {
      sum += f.rowwise().sum();
      sq += f.array().square().matrix().rowwise().sum();
      n += static_cast<double>(f.cols());
    }
    model.feature_mean = sum / n;
    model.feature_scale = ((sq / n).array() - model.feature_mean.array().square()).max(0.0).sqrt().matrix();
    for (Index i = 0; i < D; ++i) {
      if (model.feature_scale(i) < 1e-6) model.feature_scale(i) = 1.0;
    }
    double fs = 0.0, fq = 0.0;
    for (const auto& [trial, last] : train.index) {
      const double v = train.truth[static_cast<std::size_t>(trial)][static_cast<std::size_t>(last + train.arch.horizon)].max_force;
      fs += v;
      fq += v * v;
    }
    const double cnt = static_cast<double>(train.size());
    model.force_mean = fs / cnt;
    const double var = fq / cnt - model.force_mean * model.force_mean;
    model.force_scale = var > 1e-12 ? std::sqrt(var) : 1.0;
  }

  std::vector<MatrixXd> normalised;
  normalised.reserve(train.features.size());
  for (const auto& f : train.features) normalised.push_back(model.normalise(f));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<MatrixXd> steps;
  PredictorTargets y;

  auto full_loss = [&]() {
    double acc = 0.0;
    for (std::size_t s = 0; s < order.size(); s += 1024) {
      const std::size_t e = std::min(order.size(), s + 1024);
      gather_batch(train, normalised, model, order, s, e, steps, y);
      acc += model.loss(steps, y, nullptr) * static_cast<double>(e - s);
    }
    return acc / static_cast<double>(order.size());
  };
  result.initial_loss = full_loss();

  const Index P = model.params.size();
  VectorXd m1 = VectorXd::Zero(P), m2 = VectorXd::Zero(P), grad(P);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long step = 0;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x9a7));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      gather_batch(train, normalised, model, order, start, end, steps, y);
      grad.setZero();
      const double l = model.loss(steps, y, &grad);
      if (!std::isfinite(l)) {
        throw std::runtime_error("non-finite predictor loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += l * static_cast<double>(end - start);
      const double norm = grad.norm();
      if (norm > cfg.grad_clip) grad *= cfg.grad_clip / norm;
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      model.params.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }

  model.quantize_to_f32();
  std::iota(order.begin(), order.end(), 0);
  result.final_loss = full_loss();
  result.model = std::move(model);
  return result;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("score/label length mismatch");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        rank_sum += avg_rank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

PredictorMetrics evaluate_predictor(const SlipPredictor& model, const PredictorDataset& data) {
  PredictorMetrics m;
  m.count = data.size();
  if (data.size() == 0) return m;
  std::vector<MatrixXd> normalised;
  for (const auto& f : data.features) normalised.push_back(model.normalise(f));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> scores;
  std::vector<bool> labels;
  std::vector<MatrixXd> steps;
  PredictorTargets y;
  double abs_err = 0.0, cell_err = 0.0, prob = 0.0, fs = 0.0, fq = 0.0;
  for (std::size_t s = 0; s < order.size(); s += 1024) {
    const std::size_t e = std::min(order.size(), s + 1024);
    gather_batch(data, normalised, model, order, s, e, steps, y);
    const GruTrace tr = gru_forward(model.arch(), model.params, steps);
    for (Index b = 0; b < tr.out.cols(); ++b) {
      const auto [trial, last] = data.index[s + static_cast<std::size_t>(b)];
      const StepTruth& t = data.truth[static_cast<std::size_t>(trial)][static_cast<std::size_t>(last + model.arch().horizon)];
      const double p = sigmoid(tr.slip_logit(0, b));
      scores.push_back(p);
      labels.push_back(t.slip);
      prob += p;
      const double f = tr.out(0, b) * model.force_scale + model.force_mean;
      abs_err += std::abs(f - t.max_force);
      fs += t.max_force;
      fq += t.max_force * t.max_force;
      const double r = std::clamp(tr.out(1, b) * (kGridRows - 1), 0.0, kGridRows - 1.0);
      const double c = std::clamp(tr.out(2, b) * (kGridCols - 1), 0.0, kGridCols - 1.0);
      cell_err += std::hypot(r - t.max_cell.row, c - t.max_cell.col);
    }
  }
  const double n = static_cast<double>(data.size());
  m.auc = roc_auc(scores, labels);
  m.force_mae = abs_err / n;
  m.force_mean = fs / n;
  m.force_std = std::sqrt(std::max(0.0, fq / n - m.force_mean * m.force_mean));
  m.cell_distance = cell_err / n;
  m.mean_slip_prob = prob / n;
  m.positive_rate = static_cast<double>(std::count(labels.begin(), labels.end(), true)) / n;
  return m;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

void ModelRegistry::set_default(MotionKind motion, SlipPredictor model) { defaults_[motion] = std::move(model); }

void ModelRegistry::set_material(MotionKind motion, Material material, SlipPredictor model) {
  materials_[{motion, material}] = std::move(model);
}

ModelSelection ModelRegistry::select(MotionKind motion, std::optional<Material> material) const {
  const auto def = defaults_.find(motion);
  if (def == defaults_.end()) {
    throw std::out_of_range("no default predictor registered for motion '" + std::string(to_string(motion)) + "'");
  }
  if (material) {
    const auto it = materials_.find({motion, *material});
    if (it != materials_.end()) return {&it->second, ModelSource::Material};
    return {&def->second, ModelSource::Fallback};
  }
  return {&def->second, ModelSource::Default};
}

}  // namespace mmgrip
