// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/residual_net.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "bitdiff/errors.hpp"

namespace bitdiff {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kNeutral = 0.5;

double silu(double v) { return v * sigmoid(v); }
double silu_grad(double v) {
  const double s = sigmoid(v);
  return s * (1.0 + v * (1.0 - s));
}

Mat apply_silu(const Mat& m) { return m.unaryExpr([](double v) { return silu(v); }); }
Mat apply_silu_grad(const Mat& m) { return m.unaryExpr([](double v) { return silu_grad(v); }); }

void layer_norm(const Mat& x, Mat& y, ColVec& rstd) {
  const auto n = static_cast<double>(x.cols());
  y.resize(x.rows(), x.cols());
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const RowVec centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / n;
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    y.row(r) = centered * rstd(r);
  }
}

Mat layer_norm_backward(const Mat& dy, const Mat& y, const ColVec& rstd) {
  const auto n = static_cast<double>(y.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_dy = dy.row(r).sum() / n;
    const double mean_dyy = dy.row(r).dot(y.row(r)) / n;
    dx.row(r) = rstd(r) * (dy.row(r).array() - mean_dy - y.row(r).array() * mean_dyy).matrix();
  }
  return dx;
}

// out = n * (1 + scale_b) + shift_b, rows grouped `per` to an example.
Mat modulate(const Mat& n, const Mat& mod, Eigen::Index shift_col, Eigen::Index scale_col,
             Eigen::Index per) {
  const Eigen::Index w = n.cols();
  Mat out(n.rows(), w);
  for (Eigen::Index b = 0; b < mod.rows(); ++b) {
    const RowVec shift = mod.row(b).segment(shift_col, w);
    const RowVec scale = mod.row(b).segment(scale_col, w).array() + 1.0;
    out.middleRows(b * per, per) =
        (n.middleRows(b * per, per).array().rowwise() * scale.array()).rowwise() + shift.array();
  }
  return out;
}

Mat modulate_backward(const Mat& dout, const Mat& n, const Mat& mod, Mat& dmod,
                      Eigen::Index shift_col, Eigen::Index scale_col, Eigen::Index per) {
  const Eigen::Index w = n.cols();
  Mat dn(n.rows(), w);
  for (Eigen::Index b = 0; b < mod.rows(); ++b) {
    const auto rows = dout.middleRows(b * per, per);
    const RowVec scale = mod.row(b).segment(scale_col, w).array() + 1.0;
    dn.middleRows(b * per, per) = rows.array().rowwise() * scale.array();
    dmod.row(b).segment(shift_col, w) += rows.colwise().sum();
    dmod.row(b).segment(scale_col, w) +=
        (rows.array() * n.middleRows(b * per, per).array()).matrix().colwise().sum();
  }
  return dn;
}

void gated_add(Mat& h, const Mat& y, const Mat& mod, Eigen::Index gate_col, Eigen::Index per) {
  const Eigen::Index w = h.cols();
  for (Eigen::Index b = 0; b < mod.rows(); ++b) {
    const RowVec gate = mod.row(b).segment(gate_col, w);
    h.middleRows(b * per, per).array() += y.middleRows(b * per, per).array().rowwise() * gate.array();
  }
}

// Returns dy and accumulates the gate gradient; dh itself passes through.
Mat gated_add_backward(const Mat& dh, const Mat& y, const Mat& mod, Mat& dmod,
                       Eigen::Index gate_col, Eigen::Index per) {
  const Eigen::Index w = dh.cols();
  Mat dy(dh.rows(), w);
  for (Eigen::Index b = 0; b < mod.rows(); ++b) {
    const RowVec gate = mod.row(b).segment(gate_col, w);
    const auto rows = dh.middleRows(b * per, per);
    dy.middleRows(b * per, per) = rows.array().rowwise() * gate.array();
    dmod.row(b).segment(gate_col, w) +=
        (rows.array() * y.middleRows(b * per, per).array()).matrix().colwise().sum();
  }
  return dy;
}

struct BlockCache {
  Mat mod;  // B x 6d: shift1 scale1 gate1 shift2 scale2 gate2
  Mat n1, m1, q, k, v, o, att;
  ColVec rstd1, rstd2;
  std::vector<Mat> probs;  // per (example, head), T x T
  Mat n2, m2, u1, u3, g, ff;
};

struct Cache {
  Eigen::Index batch = 0, tokens = 0, bits = 0, seq = 0;
  Mat feat;     // (B T) x fin
  Mat loc_in;   // (B S) x (1 or 2)
  Mat temb, pre1, s1, c, a;
  std::vector<BlockCache> blocks;
  Mat nf;
  ColVec rstd_f;
  Mat z, nz, hmod, mz, pre_h, hh;
  ColVec rstd_z;
};

class Net {
 public:
  explicit Net(const Parameters& p) : p_(p), cfg_(p.config) {}

  CMap w(const std::string& name) const {
    const auto& v = p_.layout.find(name);
    return CMap(p_.values.data() + v.offset, static_cast<Eigen::Index>(v.rows),
                static_cast<Eigen::Index>(v.cols));
  }

  std::string blk(std::size_t l, const char* name) const {
    return "block" + std::to_string(l) + "." + name;
  }

  void forward(std::span<const double> x, std::size_t batch, std::span<const double> sigmas,
               std::span<const double> sc, const DiffusionSpec& spec, Cache& cache,
               std::span<double> residual) const;

  void backward(const Cache& cache, std::span<const double> dresidual,
                std::span<double> grad) const;

 private:
  MMap gw(std::span<double> grad, const std::string& name) const {
    const auto& v = p_.layout.find(name);
    return MMap(grad.data() + v.offset, static_cast<Eigen::Index>(v.rows),
                static_cast<Eigen::Index>(v.cols));
  }

  const Parameters& p_;
  const NetConfig& cfg_;
};

Mat time_embedding(std::span<const double> sigmas, std::size_t width) {
  const std::size_t half = width / 2;
  Mat out(static_cast<Eigen::Index>(sigmas.size()), static_cast<Eigen::Index>(width));
  for (std::size_t b = 0; b < sigmas.size(); ++b) {
    const double u = std::log(sigmas[b]);
    for (std::size_t k = 0; k < half; ++k) {
      const double freq =
          0.1 * std::pow(100.0, half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1)
                                         : 0.0);
      out(b, k) = std::sin(u * freq);
      out(b, half + k) = std::cos(u * freq);
    }
  }
  return out;
}

RowVec position_row(std::size_t t, std::size_t width) {
  RowVec pe(width);
  for (std::size_t i = 0; i < width; i += 2) {
    const double angle = static_cast<double>(t) /
                         std::pow(10000.0, static_cast<double>(i) / static_cast<double>(width));
    pe(i) = std::sin(angle);
    if (i + 1 < width) pe(i + 1) = std::cos(angle);
  }
  return pe;
}

void Net::forward(std::span<const double> x, std::size_t batch, std::span<const double> sigmas,
                  std::span<const double> sc, const DiffusionSpec& spec, Cache& cache,
                  std::span<double> residual) const {
  if (batch == 0 || x.empty() || x.size() % batch != 0) {
    throw ShapeError("network input must hold a whole number of examples");
  }
  const std::size_t S = x.size() / batch;
  const std::size_t m = cfg_.patch_size;
  if (S % m != 0) throw ShapeError("example length must be a multiple of the patch size");
  if (sigmas.size() != batch) throw ShapeError("one noise level per example required");
  if (!sc.empty() && sc.size() != x.size()) throw ShapeError("self-conditioning input shape");
  if (residual.size() != x.size()) throw ShapeError("residual output shape");
  const std::size_t T = S / m;
  const auto d = static_cast<Eigen::Index>(cfg_.width);
  const auto Hh = static_cast<Eigen::Index>(cfg_.head_width);
  const auto B = static_cast<Eigen::Index>(batch);
  const auto TT = static_cast<Eigen::Index>(T);
  const Eigen::Index R = B * TT;
  const auto Sx = static_cast<Eigen::Index>(S);
  const bool use_sc = cfg_.sc_enabled;
  const Eigen::Index nloc = use_sc ? 2 : 1;

  cache.batch = B;
  cache.tokens = TT;
  cache.bits = static_cast<Eigen::Index>(m);
  cache.seq = Sx;
  cache.feat.resize(R, static_cast<Eigen::Index>(use_sc ? 2 * m : m));
  cache.loc_in.resize(B * Sx, nloc);
  for (std::size_t b = 0; b < batch; ++b) {
    if (!(sigmas[b] > 0.0) || !std::isfinite(sigmas[b])) {
      throw ArgumentError("noise level must be positive and finite");
    }
    const double cin = input_scale(sigmas[b], spec);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t i = b * S + t * m + j;
        const double xin = cin * (x[i] - spec.data_center);
        const auto row = static_cast<Eigen::Index>(b * T + t);
        cache.feat(row, static_cast<Eigen::Index>(j)) = xin;
        cache.loc_in(static_cast<Eigen::Index>(i), 0) = xin;
        if (use_sc) {
          const double scin = 2.0 * ((sc.empty() ? kNeutral : sc[i]) - kNeutral);
          cache.feat(row, static_cast<Eigen::Index>(m + j)) = scin;
          cache.loc_in(static_cast<Eigen::Index>(i), 1) = scin;
        }
      }
    }
  }

  Mat h = cache.feat * w("embed.w");
  h.rowwise() += w("embed.b").row(0);
  if (cfg_.positions) {
    for (std::size_t t = 0; t < T; ++t) {
      const RowVec pe = position_row(t, cfg_.width);
      for (Eigen::Index b = 0; b < B; ++b) h.row(b * TT + static_cast<Eigen::Index>(t)) += pe;
    }
  }

  cache.temb = time_embedding(sigmas, cfg_.width);
  cache.pre1 = cache.temb * w("time.w1");
  cache.pre1.rowwise() += w("time.b1").row(0);
  cache.s1 = apply_silu(cache.pre1);
  cache.c = cache.s1 * w("time.w2");
  cache.c.rowwise() += w("time.b2").row(0);
  cache.a = apply_silu(cache.c);

  const auto H = static_cast<Eigen::Index>(cfg_.heads);
  const Eigen::Index dh = d / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.blocks.resize(cfg_.blocks);
  for (std::size_t l = 0; l < cfg_.blocks; ++l) {
    auto& bc = cache.blocks[l];
    bc.mod = cache.a * w(blk(l, "mod.w"));
    bc.mod.rowwise() += w(blk(l, "mod.b")).row(0);

    layer_norm(h, bc.n1, bc.rstd1);
    bc.m1 = modulate(bc.n1, bc.mod, 0, d, TT);
    bc.q = bc.m1 * w(blk(l, "attn.wq"));
    bc.k = bc.m1 * w(blk(l, "attn.wk"));
    bc.v = bc.m1 * w(blk(l, "attn.wv"));
    bc.o.resize(R, d);
    bc.probs.resize(static_cast<std::size_t>(B * H));
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index hd = 0; hd < H; ++hd) {
        const auto qh = bc.q.block(b * TT, hd * dh, TT, dh);
        const auto kh = bc.k.block(b * TT, hd * dh, TT, dh);
        const auto vh = bc.v.block(b * TT, hd * dh, TT, dh);
        Mat scores = (qh * kh.transpose()) * inv_sqrt;
        for (Eigen::Index r = 0; r < TT; ++r) {
          const double mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        bc.o.block(b * TT, hd * dh, TT, dh) = scores * vh;
        bc.probs[static_cast<std::size_t>(b * H + hd)] = std::move(scores);
      }
    }
    bc.att = bc.o * w(blk(l, "attn.wo"));
    bc.att.rowwise() += w(blk(l, "attn.bo")).row(0);
    gated_add(h, bc.att, bc.mod, 2 * d, TT);

    layer_norm(h, bc.n2, bc.rstd2);
    bc.m2 = modulate(bc.n2, bc.mod, 3 * d, 4 * d, TT);
    bc.u1 = bc.m2 * w(blk(l, "ff.w1"));
    bc.u1.rowwise() += w(blk(l, "ff.b1")).row(0);
    bc.u3 = bc.m2 * w(blk(l, "ff.w3"));
    bc.u3.rowwise() += w(blk(l, "ff.b3")).row(0);
    bc.g = apply_silu(bc.u1).cwiseProduct(bc.u3);
    bc.ff = bc.g * w(blk(l, "ff.w2"));
    bc.ff.rowwise() += w(blk(l, "ff.b2")).row(0);
    gated_add(h, bc.ff, bc.mod, 5 * d, TT);
  }

  layer_norm(h, cache.nf, cache.rstd_f);
  Mat ph = cache.nf * w("head.pa.w");
  ph.rowwise() += w("head.pa.b").row(0);
  cache.z = MMap(ph.data(), B * Sx, Hh);
  cache.z += cache.loc_in * w("head.loc.w");
  const CMap ebit = w("head.bit");
  for (Eigen::Index r = 0; r < B * Sx; ++r) cache.z.row(r) += ebit.row(r % cache.bits);
  layer_norm(cache.z, cache.nz, cache.rstd_z);
  cache.hmod = cache.a * w("head.mod.w");
  cache.hmod.rowwise() += w("head.mod.b").row(0);
  cache.mz = modulate(cache.nz, cache.hmod, 0, Hh, Sx);
  cache.pre_h = cache.mz * w("head.h1.w");
  cache.pre_h.rowwise() += w("head.h1.b").row(0);
  cache.hh = apply_silu(cache.pre_h);
  const ColVec r = cache.hh * w("head.out.w").col(0);
  const double bout = w("head.out.b")(0, 0);
  for (Eigen::Index i = 0; i < B * Sx; ++i) {
    residual[static_cast<std::size_t>(i)] = r(i) + bout;
  }
}

void Net::backward(const Cache& cache, std::span<const double> dresidual,
                   std::span<double> grad) const {
  const auto d = static_cast<Eigen::Index>(cfg_.width);
  const auto Hh = static_cast<Eigen::Index>(cfg_.head_width);
  const Eigen::Index B = cache.batch, TT = cache.tokens, Sx = cache.seq;
  const Eigen::Index R = B * TT;
  const Eigen::Map<const ColVec> dr(dresidual.data(), B * Sx);

  gw(grad, "head.out.w").col(0) += cache.hh.transpose() * dr;
  gw(grad, "head.out.b")(0, 0) += dr.sum();
  const Mat dhh = dr * w("head.out.w").col(0).transpose();
  const Mat dpre = dhh.cwiseProduct(apply_silu_grad(cache.pre_h));
  gw(grad, "head.h1.w") += cache.mz.transpose() * dpre;
  gw(grad, "head.h1.b") += dpre.colwise().sum();
  const Mat dmz = dpre * w("head.h1.w").transpose();
  Mat dhmod = Mat::Zero(B, 2 * Hh);
  const Mat dnz = modulate_backward(dmz, cache.nz, cache.hmod, dhmod, 0, Hh, Sx);
  gw(grad, "head.mod.w") += cache.a.transpose() * dhmod;
  gw(grad, "head.mod.b") += dhmod.colwise().sum();
  Mat da = dhmod * w("head.mod.w").transpose();
  Mat dz = layer_norm_backward(dnz, cache.nz, cache.rstd_z);
  gw(grad, "head.loc.w") += cache.loc_in.transpose() * dz;
  auto debit = gw(grad, "head.bit");
  for (Eigen::Index r = 0; r < B * Sx; ++r) debit.row(r % cache.bits) += dz.row(r);
  const MMap dph(dz.data(), R, cache.bits * Hh);
  gw(grad, "head.pa.w") += cache.nf.transpose() * dph;
  gw(grad, "head.pa.b") += dph.colwise().sum();
  Mat dh = layer_norm_backward(dph * w("head.pa.w").transpose(), cache.nf, cache.rstd_f);

  const auto H = static_cast<Eigen::Index>(cfg_.heads);
  const Eigen::Index dhd = d / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dhd));
  for (std::size_t li = cfg_.blocks; li-- > 0;) {
    const auto& bc = cache.blocks[li];
    Mat dmod = Mat::Zero(B, 6 * d);

    const Mat dff = gated_add_backward(dh, bc.ff, bc.mod, dmod, 5 * d, TT);
    gw(grad, blk(li, "ff.w2")) += bc.g.transpose() * dff;
    gw(grad, blk(li, "ff.b2")) += dff.colwise().sum();
    const Mat dg = dff * w(blk(li, "ff.w2")).transpose();
    const Mat du3 = dg.cwiseProduct(apply_silu(bc.u1));
    const Mat du1 = dg.cwiseProduct(bc.u3).cwiseProduct(apply_silu_grad(bc.u1));
    gw(grad, blk(li, "ff.w1")) += bc.m2.transpose() * du1;
    gw(grad, blk(li, "ff.b1")) += du1.colwise().sum();
    gw(grad, blk(li, "ff.w3")) += bc.m2.transpose() * du3;
    gw(grad, blk(li, "ff.b3")) += du3.colwise().sum();
    const Mat dm2 = du1 * w(blk(li, "ff.w1")).transpose() + du3 * w(blk(li, "ff.w3")).transpose();
    const Mat dn2 = modulate_backward(dm2, bc.n2, bc.mod, dmod, 3 * d, 4 * d, TT);
    dh += layer_norm_backward(dn2, bc.n2, bc.rstd2);

    const Mat datt = gated_add_backward(dh, bc.att, bc.mod, dmod, 2 * d, TT);
    gw(grad, blk(li, "attn.wo")) += bc.o.transpose() * datt;
    gw(grad, blk(li, "attn.bo")) += datt.colwise().sum();
    const Mat dout = datt * w(blk(li, "attn.wo")).transpose();
    Mat dq(R, d), dk(R, d), dv(R, d);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index hd = 0; hd < H; ++hd) {
        const Mat& P = bc.probs[static_cast<std::size_t>(b * H + hd)];
        const auto qh = bc.q.block(b * TT, hd * dhd, TT, dhd);
        const auto kh = bc.k.block(b * TT, hd * dhd, TT, dhd);
        const auto vh = bc.v.block(b * TT, hd * dhd, TT, dhd);
        const auto doh = dout.block(b * TT, hd * dhd, TT, dhd);
        dv.block(b * TT, hd * dhd, TT, dhd) = P.transpose() * doh;
        const Mat dP = doh * vh.transpose();
        Mat dS = P.cwiseProduct(dP);
        const ColVec rowdot = dS.rowwise().sum();
        dS -= P.cwiseProduct(rowdot.replicate(1, TT));
        dq.block(b * TT, hd * dhd, TT, dhd) = (dS * kh) * inv_sqrt;
        dk.block(b * TT, hd * dhd, TT, dhd) = (dS.transpose() * qh) * inv_sqrt;
      }
    }
    gw(grad, blk(li, "attn.wq")) += bc.m1.transpose() * dq;
    gw(grad, blk(li, "attn.wk")) += bc.m1.transpose() * dk;
    gw(grad, blk(li, "attn.wv")) += bc.m1.transpose() * dv;
    const Mat dm1 = dq * w(blk(li, "attn.wq")).transpose() +
                    dk * w(blk(li, "attn.wk")).transpose() +
                    dv * w(blk(li, "attn.wv")).transpose();
    const Mat dn1 = modulate_backward(dm1, bc.n1, bc.mod, dmod, 0, d, TT);
    dh += layer_norm_backward(dn1, bc.n1, bc.rstd1);

    gw(grad, blk(li, "mod.w")) += cache.a.transpose() * dmod;
    gw(grad, blk(li, "mod.b")) += dmod.colwise().sum();
    da += dmod * w(blk(li, "mod.w")).transpose();
  }

  gw(grad, "embed.w") += cache.feat.transpose() * dh;
  gw(grad, "embed.b") += dh.colwise().sum();

  const Mat dc = da.cwiseProduct(apply_silu_grad(cache.c));
  gw(grad, "time.w2") += cache.s1.transpose() * dc;
  gw(grad, "time.b2") += dc.colwise().sum();
  const Mat dpre1 = (dc * w("time.w2").transpose()).cwiseProduct(apply_silu_grad(cache.pre1));
  gw(grad, "time.w1") += cache.temb.transpose() * dpre1;
  gw(grad, "time.b1") += dpre1.colwise().sum();
}

std::size_t bits_per_example(std::span<const double> x0, std::size_t batch) {
  if (batch == 0 || x0.empty() || x0.size() % batch != 0) {
    throw ShapeError("batch must hold a whole number of non-empty examples");
  }
  return x0.size() / batch;
}

std::vector<double> noisy_inputs(std::span<const double> x0, std::span<const double> sigmas,
                                 std::span<const double> eps) {
  if (eps.size() != x0.size()) throw ShapeError("noise and clean batch shapes differ");
  const std::size_t S = bits_per_example(x0, sigmas.size());
  std::vector<double> x(x0.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + sigmas[i / S] * eps[i];
  return x;
}

// Probabilities per example with per-example sigma.
std::vector<double> combine_batch(std::span<const double> residual, std::span<const double> x,
                                  std::span<const double> sigmas, const DiffusionSpec& spec) {
  const std::size_t S = x.size() / sigmas.size();
  std::vector<double> probs(x.size());
  for (std::size_t b = 0; b < sigmas.size(); ++b) {
    combine_into(residual.subspan(b * S, S), x.subspan(b * S, S), sigmas[b], spec,
                 std::span(probs).subspan(b * S, S));
  }
  return probs;
}

}  // namespace

void NetConfig::validate() const {
  if (blocks == 0 || width == 0 || heads == 0 || ff_width == 0 || head_width == 0) {
    throw ConfigError("network sizes must be positive");
  }
  if (width % heads != 0) throw ConfigError("width must be divisible by the head count");
  if (width % 2 != 0 || head_width < 2) throw ConfigError("width must be even");
  if (patch_size == 0) throw ConfigError("patch size must be positive");
  if (!(p_sc >= 0.0 && p_sc <= 1.0)) throw ConfigError("p_sc must lie in [0, 1]");
}

std::string NetConfig::serialize() const {
  std::ostringstream out;
  out << "blocks=" << blocks << " width=" << width << " heads=" << heads
      << " ff_width=" << ff_width << " head_width=" << head_width << " patch_size=" << patch_size
      << " sc_enabled=" << (sc_enabled ? 1 : 0) << " p_sc=" << p_sc
      << " positions=" << (positions ? 1 : 0);
  return out.str();
}

NetConfig NetConfig::parse(const std::string& line) {
  NetConfig c;
  std::istringstream in(line);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed network config item: " + item);
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "blocks") c.blocks = std::stoul(value);
      else if (key == "width") c.width = std::stoul(value);
      else if (key == "heads") c.heads = std::stoul(value);
      else if (key == "ff_width") c.ff_width = std::stoul(value);
      else if (key == "head_width") c.head_width = std::stoul(value);
      else if (key == "patch_size") c.patch_size = std::stoul(value);
      else if (key == "sc_enabled") c.sc_enabled = std::stoi(value) != 0;
      else if (key == "p_sc") c.p_sc = std::stod(value);
      else if (key == "positions") c.positions = std::stoi(value) != 0;
      else throw ConfigError("unknown network config key: " + key);
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for network config key " + key + ": " + value);
    }
  }
  c.validate();
  return c;
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::embedding: return "embedding";
    case ParamGroup::time: return "time";
    case ParamGroup::modulation: return "modulation";
    case ParamGroup::attention: return "attention";
    case ParamGroup::feed_forward: return "feed_forward";
    case ParamGroup::head: return "head";
  }
  return "unknown";
}

void ParamLayout::add(std::string name, std::size_t rows, std::size_t cols, ParamGroup group,
                      bool zero_init) {
  ParamView v;
  v.decay = rows > 1 && cols > 1;
  v.name = std::move(name);
  v.offset = size_;
  v.rows = rows;
  v.cols = cols;
  v.group = group;
  v.zero_init = zero_init;
  size_ += v.size();
  views_.push_back(std::move(v));
}

ParamLayout ParamLayout::build(const NetConfig& config) {
  config.validate();
  const std::size_t d = config.width, m = config.patch_size, F = config.ff_width;
  const std::size_t Hh = config.head_width;
  ParamLayout L;
  L.add("embed.w", config.sc_enabled ? 2 * m : m, d, ParamGroup::embedding);
  L.add("embed.b", 1, d, ParamGroup::embedding);
  L.add("time.w1", d, d, ParamGroup::time);
  L.add("time.b1", 1, d, ParamGroup::time);
  L.add("time.w2", d, d, ParamGroup::time);
  L.add("time.b2", 1, d, ParamGroup::time);
  for (std::size_t l = 0; l < config.blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    L.add(p + "mod.w", d, 6 * d, ParamGroup::modulation, true);
    L.add(p + "mod.b", 1, 6 * d, ParamGroup::modulation, true);
    L.add(p + "attn.wq", d, d, ParamGroup::attention);
    L.add(p + "attn.wk", d, d, ParamGroup::attention);
    L.add(p + "attn.wv", d, d, ParamGroup::attention);
    L.add(p + "attn.wo", d, d, ParamGroup::attention);
    L.add(p + "attn.bo", 1, d, ParamGroup::attention);
    L.add(p + "ff.w1", d, F, ParamGroup::feed_forward);
    L.add(p + "ff.b1", 1, F, ParamGroup::feed_forward);
    L.add(p + "ff.w3", d, F, ParamGroup::feed_forward);
    L.add(p + "ff.b3", 1, F, ParamGroup::feed_forward);
    L.add(p + "ff.w2", F, d, ParamGroup::feed_forward);
    L.add(p + "ff.b2", 1, d, ParamGroup::feed_forward);
  }
  L.add("head.pa.w", d, m * Hh, ParamGroup::head);
  L.add("head.pa.b", 1, m * Hh, ParamGroup::head);
  L.add("head.loc.w", config.sc_enabled ? 2 : 1, Hh, ParamGroup::head);
  L.add("head.bit", m, Hh, ParamGroup::head);
  L.add("head.mod.w", d, 2 * Hh, ParamGroup::modulation, true);
  L.add("head.mod.b", 1, 2 * Hh, ParamGroup::modulation, true);
  L.add("head.h1.w", Hh, Hh, ParamGroup::head);
  L.add("head.h1.b", 1, Hh, ParamGroup::head);
  L.add("head.out.w", Hh, 1, ParamGroup::head, true);
  L.add("head.out.b", 1, 1, ParamGroup::head, true);
  return L;
}

const ParamView& ParamLayout::find(const std::string& name) const {
  for (const auto& v : views_) {
    if (v.name == name) return v;
  }
  throw ArgumentError("no parameter view named " + name);
}

Parameters Parameters::init(const NetConfig& config, std::uint64_t seed) {
  Parameters p;
  p.config = config;
  p.layout = ParamLayout::build(config);
  p.values.assign(p.layout.size(), 0.0);
  Rng rng(seed);
  for (const auto& v : p.layout.views()) {
    if (v.zero_init || v.rows == 1) continue;
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(v.rows));
    for (std::size_t i = 0; i < v.size(); ++i) p.values[v.offset + i] = std_dev * rng.normal();
  }
  return p;
}

std::span<double> Parameters::view(const std::string& name) {
  const auto& v = layout.find(name);
  return std::span(values).subspan(v.offset, v.size());
}

std::span<const double> Parameters::view(const std::string& name) const {
  const auto& v = layout.find(name);
  return std::span(values).subspan(v.offset, v.size());
}

void forward_residual(const Parameters& params, std::span<const double> x, std::size_t batch,
                      std::span<const double> sigmas, std::span<const double> sc,
                      std::span<double> residual, const DiffusionSpec& spec) {
  Cache cache;
  Net(params).forward(x, batch, sigmas, sc, spec, cache, residual);
}

DenoiserOutput forward_denoise(const Parameters& params, std::span<const double> x, double sigma,
                               std::span<const double> sc, const DiffusionSpec& spec) {
  std::vector<double> residual(x.size());
  const double sigmas[1] = {sigma};
  forward_residual(params, x, 1, sigmas, sc, residual, spec);
  return combine_to_probabilities(residual, x, sigma, spec);
}

void denoise_batch(const Parameters& params, std::span<const double> x, std::size_t batch,
                   double sigma, std::span<const double> sc, std::span<double> out,
                   const DiffusionSpec& spec) {
  std::vector<double> residual(x.size());
  const std::vector<double> sigmas(batch, sigma);
  forward_residual(params, x, batch, sigmas, sc, residual, spec);
  combine_into(residual, x, sigma, spec, out);
}

BatchNoise draw_batch_noise(std::size_t batch, std::size_t bits, double p_sc, Rng& rng) {
  BatchNoise noise;
  noise.eps.resize(batch * bits);
  for (auto& e : noise.eps) e = rng.normal();
  noise.use_sc.resize(batch);
  for (auto& f : noise.use_sc) f = rng.uniform() < p_sc ? 1 : 0;
  return noise;
}

LossGrad loss_and_grad_fixed(const Parameters& params, std::span<const double> x0,
                             std::span<const double> sigmas, std::span<const double> eps,
                             std::span<const double> sc, const DiffusionSpec& spec) {
  const std::size_t batch = sigmas.size();
  const std::size_t S = bits_per_example(x0, batch);
  const auto x = noisy_inputs(x0, sigmas, eps);
  Net net(params);
  Cache cache;
  std::vector<double> residual(x.size());
  net.forward(x, batch, sigmas, sc, spec, cache, residual);
  const auto probs = combine_batch(residual, x, sigmas, spec);

  LossGrad out;
  out.unweighted.resize(batch);
  out.weighted.resize(batch);
  std::vector<double> dres(x.size());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row = std::span(probs).subspan(b * S, S);
    const auto lv = sm_loss(row, x0.subspan(b * S, S), sigmas[b], spec);
    out.unweighted[b] = lv.unweighted;
    out.weighted[b] = lv.weighted;
    out.loss += lv.weighted * inv_batch;
    const double coeff = inv_batch * edm_weight(sigmas[b], spec) * 2.0 / static_cast<double>(S);
    for (std::size_t i = b * S; i < (b + 1) * S; ++i) {
      dres[i] = coeff * (probs[i] - x0[i]) * probs[i] * (1.0 - probs[i]);
    }
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");
  out.gradient.assign(params.values.size(), 0.0);
  net.backward(cache, dres, out.gradient);
  return out;
}

std::vector<double> self_condition_inputs(const Parameters& params, std::span<const double> x0,
                                          std::span<const double> sigmas, const BatchNoise& noise,
                                          const DiffusionSpec& spec) {
  const std::size_t batch = sigmas.size();
  const std::size_t S = bits_per_example(x0, batch);
  if (noise.use_sc.size() != batch) throw ShapeError("one self-conditioning flag per example");
  std::vector<double> sc(x0.size(), kNeutral);
  if (!params.config.sc_enabled) return sc;
  if (std::none_of(noise.use_sc.begin(), noise.use_sc.end(), [](auto f) { return f != 0; })) {
    return sc;
  }
  const auto x = noisy_inputs(x0, sigmas, noise.eps);
  std::vector<double> residual(x.size());
  forward_residual(params, x, batch, sigmas, {}, residual, spec);
  const auto probs = combine_batch(residual, x, sigmas, spec);
  for (std::size_t b = 0; b < batch; ++b) {
    if (noise.use_sc[b] == 0) continue;
    std::copy_n(probs.begin() + static_cast<std::ptrdiff_t>(b * S), S,
                sc.begin() + static_cast<std::ptrdiff_t>(b * S));
  }
  return sc;
}

LossGrad loss_and_grad(const Parameters& params, std::span<const double> x0,
                       std::span<const double> sigmas, const BatchNoise& noise,
                       const DiffusionSpec& spec) {
  const auto sc = self_condition_inputs(params, x0, sigmas, noise, spec);
  return loss_and_grad_fixed(params, x0, sigmas, noise.eps, sc, spec);
}

double loss_value(const Parameters& params, std::span<const double> x0,
                  std::span<const double> sigmas, std::span<const double> eps,
                  std::span<const double> sc, const DiffusionSpec& spec) {
  const std::size_t batch = sigmas.size();
  const std::size_t S = bits_per_example(x0, batch);
  const auto x = noisy_inputs(x0, sigmas, eps);
  std::vector<double> residual(x.size());
  forward_residual(params, x, batch, sigmas, sc, residual, spec);
  const auto probs = combine_batch(residual, x, sigmas, spec);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    loss += sm_loss(std::span(probs).subspan(b * S, S), x0.subspan(b * S, S), sigmas[b], spec)
                .weighted;
  }
  return loss / static_cast<double>(batch);
}

std::vector<double> matched_filter_losses(std::span<const double> x0,
                                          std::span<const double> sigmas,
                                          std::span<const double> eps, const DiffusionSpec& spec) {
  const std::size_t batch = sigmas.size();
  const std::size_t S = bits_per_example(x0, batch);
  const auto x = noisy_inputs(x0, sigmas, eps);
  const std::vector<double> zero(x.size(), 0.0);
  const auto probs = combine_batch(zero, x, sigmas, spec);
  std::vector<double> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    out[b] = sm_loss(std::span(probs).subspan(b * S, S), x0.subspan(b * S, S), sigmas[b], spec)
                 .weighted;
  }
  return out;
}

GradcheckReport gradcheck(const Parameters& params, std::span<const double> x0,
                          std::span<const double> sigmas, std::span<const double> eps,
                          std::span<const double> sc, const DiffusionSpec& spec,
                          std::size_t coords, Rng& rng, double step, double floor) {
  const auto analytic = loss_and_grad_fixed(params, x0, sigmas, eps, sc, spec).gradient;
  std::map<ParamGroup, std::vector<std::size_t>> by_group;
  for (std::size_t vi = 0; vi < params.layout.views().size(); ++vi) {
    by_group[params.layout.views()[vi].group].push_back(vi);
  }
  GradcheckReport report;
  Parameters probe = params;
  const std::size_t per_group = (coords + by_group.size() - 1) / by_group.size();
  for (const auto& [group, view_ids] : by_group) {
    std::size_t total = 0;
    for (auto vi : view_ids) total += params.layout.views()[vi].size();
    for (std::size_t n = 0; n < per_group; ++n) {
      std::size_t pick = rng.below(total);
      const ParamView* view = nullptr;
      for (auto vi : view_ids) {
        const auto& v = params.layout.views()[vi];
        if (pick < v.size()) {
          view = &v;
          break;
        }
        pick -= v.size();
      }
      const std::size_t index = view->offset + pick;
      const double saved = probe.values[index];
      probe.values[index] = saved + step;
      const double up = loss_value(probe, x0, sigmas, eps, sc, spec);
      probe.values[index] = saved - step;
      const double down = loss_value(probe, x0, sigmas, eps, sc, spec);
      probe.values[index] = saved;
      GradcheckEntry e;
      e.index = index;
      e.view = view->name;
      e.group = group;
      e.analytic = analytic[index];
      e.numeric = (up - down) / (2.0 * step);
      e.rel_error = std::abs(e.analytic - e.numeric) /
                    std::max(std::abs(e.analytic) + std::abs(e.numeric), floor);
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

void randomize_parameters(Parameters& params, Rng& rng, double scale) {
  for (const auto& v : params.layout.views()) {
    const double std_dev = scale / std::sqrt(static_cast<double>(v.rows));
    for (std::size_t i = 0; i < v.size(); ++i) params.values[v.offset + i] = std_dev * rng.normal();
  }
}

}  // namespace bitdiff
