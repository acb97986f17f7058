#include "sixmap/net.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "sixmap/common.hpp"
#include "sixmap/parallel.hpp"
#include "sixmap/random.hpp"

namespace sixmap::net {
namespace {

// Samples per task.  Gradient partials are reduced per chunk in index order,
// which keeps results independent of the worker count.
constexpr std::size_t kChunk = 8;
constexpr std::size_t kInferChunk = 256;

std::size_t chunks(std::size_t n) { return (n + kChunk - 1) / kChunk; }

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Param<T> make_param(std::string name, std::vector<int> shape, bool trainable = true) {
  std::size_t size = 1;
  for (int d : shape) size *= static_cast<std::size_t>(d);
  Param<T> p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value.assign(size, T(0));
  p.grad.assign(size, T(0));
  p.trainable = trainable;
  return p;
}

template <typename T>
void init_uniform(Param<T>& p, double limit, std::uint64_t seed) {
  Rng rng(derive_seed(seed, p.name));
  for (auto& v : p.value) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
}

}  // namespace

template <typename T>
class Layer {
 public:
  Layer(std::string name, Shape3 in, Shape3 out) : name_(std::move(name)), in_(in), out_(out) {}
  virtual ~Layer() = default;

  virtual void forward(const T* in, T* out, std::size_t n, Mode mode, std::uint64_t seed) = 0;
  // din is null when the input gradient is not needed.
  virtual void backward(const T* in, const T* out, const T* dout, T* din, std::size_t n) = 0;
  virtual void collect(std::vector<Param<T>*>&) {}
  virtual bool traced() const { return false; }
  virtual void begin_calibration() {}
  virtual void end_calibration() {}

  const std::string& name() const { return name_; }
  Shape3 in_shape() const { return in_; }
  Shape3 out_shape() const { return out_; }

 protected:
  std::string name_;
  Shape3 in_;
  Shape3 out_;
};

namespace {

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, Shape3 in, int cout, int kh, int kw, int ph, int pw, std::uint64_t seed)
      : Layer<T>(name, in, Shape3{cout, in.h + 2 * ph - kh + 1, in.w + 2 * pw - kw + 1}),
        kh_(kh), kw_(kw), ph_(ph), pw_(pw),
        w_(make_param<T>(name + ".weight", {cout, in.c, kh, kw})),
        b_(make_param<T>(name + ".bias", {cout})) {
    require(this->out_.h > 0 && this->out_.w > 0, fmt::format("{}: empty output", name));
    init_uniform(w_, std::sqrt(6.0 / static_cast<double>(k())), seed);
  }

  void forward(const T* in, T* out, std::size_t n, Mode, std::uint64_t) override {
    const std::size_t isz = this->in_.size(), osz = this->out_.size();
    const int cout = this->out_.c;
    const Eigen::Index hw = this->out_.h * this->out_.w;
    parallel_for(chunks(n), [&](std::size_t c) {
      std::vector<T> cols(static_cast<std::size_t>(k()) * static_cast<std::size_t>(hw));
      Eigen::Map<const MatR<T>> wm(w_.value.data(), cout, k());
      for (std::size_t s = c * kChunk; s < std::min(n, (c + 1) * kChunk); ++s) {
        im2col(in + s * isz, cols.data());
        Eigen::Map<const MatR<T>> cm(cols.data(), k(), hw);
        Eigen::Map<MatR<T>> om(out + s * osz, cout, hw);
        om.noalias() = wm * cm;
        for (int o = 0; o < cout; ++o) om.row(o).array() += b_.value[static_cast<std::size_t>(o)];
      }
    });
  }

  void backward(const T* in, const T*, const T* dout, T* din, std::size_t n) override {
    const std::size_t isz = this->in_.size(), osz = this->out_.size();
    const int cout = this->out_.c;
    const Eigen::Index hw = this->out_.h * this->out_.w;
    const std::size_t nc = chunks(n);
    std::vector<std::vector<T>> dw(nc), db(nc);
    parallel_for(nc, [&](std::size_t c) {
      std::vector<T> cols(static_cast<std::size_t>(k()) * static_cast<std::size_t>(hw));
      std::vector<T> dcols(din ? cols.size() : 0);
      dw[c].assign(w_.value.size(), T(0));
      db[c].assign(b_.value.size(), T(0));
      Eigen::Map<const MatR<T>> wm(w_.value.data(), cout, k());
      Eigen::Map<MatR<T>> dwm(dw[c].data(), cout, k());
      for (std::size_t s = c * kChunk; s < std::min(n, (c + 1) * kChunk); ++s) {
        im2col(in + s * isz, cols.data());
        Eigen::Map<const MatR<T>> cm(cols.data(), k(), hw);
        Eigen::Map<const MatR<T>> dom(dout + s * osz, cout, hw);
        dwm.noalias() += dom * cm.transpose();
        for (int o = 0; o < cout; ++o) {
          const T* row = dout + s * osz + static_cast<std::size_t>(o) * static_cast<std::size_t>(hw);
          double acc = 0.0;
          for (Eigen::Index i = 0; i < hw; ++i) acc += static_cast<double>(row[i]);
          db[c][static_cast<std::size_t>(o)] += static_cast<T>(acc);
        }
        if (din) {
          Eigen::Map<MatR<T>> dcm(dcols.data(), k(), hw);
          dcm.noalias() = wm.transpose() * dom;
          col2im(dcols.data(), din + s * isz);
        }
      }
    });
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t i = 0; i < w_.grad.size(); ++i) w_.grad[i] += dw[c][i];
      for (std::size_t i = 0; i < b_.grad.size(); ++i) b_.grad[i] += db[c][i];
    }
  }

  void collect(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  bool traced() const override { return true; }

 private:
  int k() const { return this->in_.c * kh_ * kw_; }

  void im2col(const T* in, T* cols) const {
    const int h = this->in_.h, w = this->in_.w, oh = this->out_.h, ow = this->out_.w;
    T* dst = cols;
    for (int c = 0; c < this->in_.c; ++c) {
      const T* plane = in + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy - ph_ + ky;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + ow, T(0));
              dst += ow;
              continue;
            }
            const T* row = plane + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox - pw_ + kx;
              *dst++ = (ix >= 0 && ix < w) ? row[ix] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const T* cols, T* din) const {
    const int h = this->in_.h, w = this->in_.w, oh = this->out_.h, ow = this->out_.w;
    std::fill(din, din + this->in_.size(), T(0));
    const T* src = cols;
    for (int c = 0; c < this->in_.c; ++c) {
      T* plane = din + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy - ph_ + ky;
            if (iy < 0 || iy >= h) {
              src += ow;
              continue;
            }
            T* row = plane + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < ow; ++ox, ++src) {
              const int ix = ox - pw_ + kx;
              if (ix >= 0 && ix < w) row[ix] += *src;
            }
          }
        }
      }
    }
  }

  int kh_, kw_, ph_, pw_;
  Param<T> w_, b_;
};

// Batch normalisation per channel followed by ReLU.
template <typename T>
class BatchNormRelu final : public Layer<T> {
 public:
  BatchNormRelu(std::string name, Shape3 shape, double momentum, double eps)
      : Layer<T>(name, shape, shape), momentum_(momentum), eps_(eps),
        gamma_(make_param<T>(name + ".gamma", {shape.c})),
        beta_(make_param<T>(name + ".beta", {shape.c})),
        running_mean_(make_param<T>(name + ".running_mean", {shape.c}, false)),
        running_var_(make_param<T>(name + ".running_var", {shape.c}, false)) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    std::fill(running_var_.value.begin(), running_var_.value.end(), T(1));
  }

  void forward(const T* in, T* out, std::size_t n, Mode mode, std::uint64_t) override {
    const int ch = this->in_.c;
    const std::size_t sp = static_cast<std::size_t>(this->in_.h) * this->in_.w;
    const std::size_t csz = this->in_.size();
    mean_.assign(static_cast<std::size_t>(ch), T(0));
    inv_std_.assign(static_cast<std::size_t>(ch), T(0));
    const double m = static_cast<double>(n * sp);
    if (mode == Mode::kCalibrate) calib_n_ += m;
    for (int c = 0; c < ch; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      double mu, var;
      if (mode != Mode::kInfer) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const T* x = in + i * csz + cc * sp;
          for (std::size_t j = 0; j < sp; ++j) s += static_cast<double>(x[j]);
        }
        mu = s / m;
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const T* x = in + i * csz + cc * sp;
          for (std::size_t j = 0; j < sp; ++j) {
            const double d = static_cast<double>(x[j]) - mu;
            v += d * d;
          }
        }
        var = v / m;
        if (mode == Mode::kCalibrate) {
          calib_sum_[cc] += s;
          calib_sq_[cc] += v + m * mu * mu;
        }
      }
      if (mode == Mode::kTrain) {
        const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
        running_mean_.value[cc] =
            static_cast<T>((1.0 - momentum_) * running_mean_.value[cc] + momentum_ * mu);
        running_var_.value[cc] =
            static_cast<T>((1.0 - momentum_) * running_var_.value[cc] + momentum_ * unbiased);
      } else if (mode == Mode::kInfer) {
        mu = static_cast<double>(running_mean_.value[cc]);
        var = static_cast<double>(running_var_.value[cc]);
      }
      const T tmu = static_cast<T>(mu);
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
      mean_[cc] = tmu;
      inv_std_[cc] = istd;
      const T g = gamma_.value[cc], b = beta_.value[cc];
      for (std::size_t i = 0; i < n; ++i) {
        const T* x = in + i * csz + cc * sp;
        T* y = out + i * csz + cc * sp;
        for (std::size_t j = 0; j < sp; ++j) {
          const T v = g * (x[j] - tmu) * istd + b;
          y[j] = v > T(0) ? v : T(0);
        }
      }
    }
  }

  void backward(const T* in, const T* out, const T* dout, T* din, std::size_t n) override {
    const int ch = this->in_.c;
    const std::size_t sp = static_cast<std::size_t>(this->in_.h) * this->in_.w;
    const std::size_t csz = this->in_.size();
    const double m = static_cast<double>(n * sp);
    for (int c = 0; c < ch; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      const T mu = mean_[cc], istd = inv_std_[cc];
      double sg = 0.0, sgx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = i * csz + cc * sp;
        for (std::size_t j = 0; j < sp; ++j) {
          if (out[off + j] > T(0)) {
            const double g = static_cast<double>(dout[off + j]);
            sg += g;
            sgx += g * static_cast<double>((in[off + j] - mu) * istd);
          }
        }
      }
      gamma_.grad[cc] += static_cast<T>(sgx);
      beta_.grad[cc] += static_cast<T>(sg);
      if (!din) continue;
      const double scale = static_cast<double>(gamma_.value[cc]) * static_cast<double>(istd) / m;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = i * csz + cc * sp;
        for (std::size_t j = 0; j < sp; ++j) {
          const double g = out[off + j] > T(0) ? static_cast<double>(dout[off + j]) : 0.0;
          const double xh = static_cast<double>((in[off + j] - mu) * istd);
          din[off + j] = static_cast<T>(scale * (m * g - sg - xh * sgx));
        }
      }
    }
  }

  void begin_calibration() override {
    calib_sum_.assign(gamma_.value.size(), 0.0);
    calib_sq_.assign(gamma_.value.size(), 0.0);
    calib_n_ = 0.0;
  }

  void end_calibration() override {
    if (calib_n_ <= 1.0) return;
    for (std::size_t c = 0; c < calib_sum_.size(); ++c) {
      const double mu = calib_sum_[c] / calib_n_;
      const double var = std::max(0.0, calib_sq_[c] / calib_n_ - mu * mu) * calib_n_ / (calib_n_ - 1.0);
      running_mean_.value[c] = static_cast<T>(mu);
      running_var_.value[c] = static_cast<T>(var);
    }
  }

  void collect(std::vector<Param<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

 private:
  double momentum_, eps_;
  Param<T> gamma_, beta_, running_mean_, running_var_;
  std::vector<T> mean_, inv_std_;
  std::vector<double> calib_sum_, calib_sq_;
  double calib_n_ = 0.0;
};

template <typename T>
class MaxPool2 final : public Layer<T> {
 public:
  MaxPool2(std::string name, Shape3 in)
      : Layer<T>(std::move(name), in, Shape3{in.c, in.h / 2, in.w / 2}) {}

  void forward(const T* in, T* out, std::size_t n, Mode, std::uint64_t) override {
    const Shape3 is = this->in_, os = this->out_;
    arg_.resize(n * os.size());
    for (std::size_t s = 0; s < n; ++s) {
      for (int c = 0; c < os.c; ++c) {
        const T* plane = in + s * is.size() + static_cast<std::size_t>(c) * is.h * is.w;
        for (int y = 0; y < os.h; ++y) {
          for (int x = 0; x < os.w; ++x) {
            const std::size_t o = s * os.size() + (static_cast<std::size_t>(c) * os.h + y) * os.w + x;
            std::uint8_t best = 0;
            T bv = plane[(2 * y) * is.w + 2 * x];
            for (std::uint8_t q = 1; q < 4; ++q) {
              const T v = plane[(2 * y + q / 2) * is.w + 2 * x + q % 2];
              if (v > bv) {
                bv = v;
                best = q;
              }
            }
            out[o] = bv;
            arg_[o] = best;
          }
        }
      }
    }
  }

  void backward(const T*, const T*, const T* dout, T* din, std::size_t n) override {
    if (!din) return;
    const Shape3 is = this->in_, os = this->out_;
    std::fill(din, din + n * is.size(), T(0));
    for (std::size_t s = 0; s < n; ++s) {
      for (int c = 0; c < os.c; ++c) {
        T* plane = din + s * is.size() + static_cast<std::size_t>(c) * is.h * is.w;
        for (int y = 0; y < os.h; ++y) {
          for (int x = 0; x < os.w; ++x) {
            const std::size_t o = s * os.size() + (static_cast<std::size_t>(c) * os.h + y) * os.w + x;
            const int q = arg_[o];
            plane[(2 * y + q / 2) * is.w + 2 * x + q % 2] += dout[o];
          }
        }
      }
    }
  }

  bool traced() const override { return true; }

 private:
  std::vector<std::uint8_t> arg_;
};

template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(std::string name, Shape3 shape, double rate)
      : Layer<T>(std::move(name), shape, shape), rate_(rate) {}

  void forward(const T* in, T* out, std::size_t n, Mode mode, std::uint64_t seed) override {
    const std::size_t sz = this->in_.size();
    if (mode != Mode::kTrain || rate_ <= 0.0) {
      std::copy(in, in + n * sz, out);
      mask_.assign(n * sz, 1);
      return;
    }
    mask_.resize(n * sz);
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    parallel_for(n, [&](std::size_t s) {
      Rng rng(derive_seed(seed, this->name_, s));
      for (std::size_t j = 0; j < sz; ++j) {
        const std::size_t i = s * sz + j;
        mask_[i] = uniform01(rng) >= rate_ ? 1 : 0;
        out[i] = mask_[i] ? in[i] * scale : T(0);
      }
    });
  }

  void backward(const T*, const T*, const T* dout, T* din, std::size_t n) override {
    if (!din) return;
    const T scale = rate_ > 0.0 ? static_cast<T>(1.0 / (1.0 - rate_)) : T(1);
    for (std::size_t i = 0; i < n * this->in_.size(); ++i) din[i] = mask_[i] ? dout[i] * scale : T(0);
  }

 private:
  double rate_;
  std::vector<std::uint8_t> mask_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, Shape3 in, int out, double gain, std::uint64_t seed)
      : Layer<T>(name, in, Shape3{out, 1, 1}),
        w_(make_param<T>(name + ".weight", {out, static_cast<int>(in.size())})),
        b_(make_param<T>(name + ".bias", {out})) {
    init_uniform(w_, std::sqrt(gain / static_cast<double>(in.size())), seed);
  }

  void forward(const T* in, T* out, std::size_t n, Mode, std::uint64_t) override {
    const Eigen::Index fi = static_cast<Eigen::Index>(this->in_.size());
    const Eigen::Index fo = this->out_.c;
    Eigen::Map<const MatR<T>> x(in, static_cast<Eigen::Index>(n), fi);
    Eigen::Map<const MatR<T>> w(w_.value.data(), fo, fi);
    Eigen::Map<MatR<T>> y(out, static_cast<Eigen::Index>(n), fo);
    y.noalias() = x * w.transpose();
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(b_.value.data(), fo);
    y.rowwise() += b;
  }

  void backward(const T* in, const T*, const T* dout, T* din, std::size_t n) override {
    const Eigen::Index fi = static_cast<Eigen::Index>(this->in_.size());
    const Eigen::Index fo = this->out_.c;
    const auto nn = static_cast<Eigen::Index>(n);
    Eigen::Map<const MatR<T>> x(in, nn, fi);
    Eigen::Map<const MatR<T>> w(w_.value.data(), fo, fi);
    Eigen::Map<const MatR<T>> dy(dout, nn, fo);
    Eigen::Map<MatR<T>> dw(w_.grad.data(), fo, fi);
    dw.noalias() += dy.transpose() * x;
    for (Eigen::Index o = 0; o < fo; ++o) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < nn; ++r) acc += static_cast<double>(dout[r * fo + o]);
      b_.grad[static_cast<std::size_t>(o)] += static_cast<T>(acc);
    }
    if (din) {
      Eigen::Map<MatR<T>> dx(din, nn, fi);
      dx.noalias() = dy * w;
    }
  }

  void collect(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  bool traced() const override { return true; }

 private:
  Param<T> w_, b_;
};

}  // namespace

template <typename T>
Branch<T>::Branch(std::string name, const BranchConfig& cfg, std::uint64_t seed)
    : name_(std::move(name)), cfg_(cfg) {
  const std::uint64_t s = derive_seed(seed, name_);
  auto prefix = [&](const char* n) { return name_ + "." + n; };
  Shape3 shape{1, heatmap::kRows, heatmap::kCols};
  auto conv = [&](const char* n, int cout, int kh, int kw, int ph, int pw) {
    layers_.push_back(std::make_unique<Conv2d<T>>(prefix(n), shape, cout, kh, kw, ph, pw, s));
    shape = layers_.back()->out_shape();
    layers_.push_back(std::make_unique<BatchNormRelu<T>>(prefix(n) + "_bn", shape,
                                                         cfg_.bn_momentum, cfg_.bn_eps));
  };
  auto pool = [&](const char* n) {
    layers_.push_back(std::make_unique<MaxPool2<T>>(prefix(n), shape));
    shape = layers_.back()->out_shape();
  };
  auto drop = [&](const char* n) {
    layers_.push_back(std::make_unique<Dropout<T>>(prefix(n), shape, cfg_.dropout));
  };
  conv("conv1a", cfg_.c1, 2, 3, 1, 0);
  conv("conv1b", cfg_.c1, 3, 3, 1, 1);
  pool("maxpool1");
  drop("dropout1");
  conv("conv2a", cfg_.c2, 3, 3, 1, 1);
  conv("conv2b", cfg_.c2, 3, 3, 1, 1);
  pool("maxpool2");
  drop("dropout2");
  conv("conv3a", cfg_.c3, 2, 3, 1, 1);
  conv("conv3b", cfg_.c3, 3, 3, 1, 1);
  pool("maxpool3");
  drop("dropout3");
  conv("conv4a", cfg_.c4, 3, 3, 1, 1);
  conv("conv4b", cfg_.c4, 3, 3, 1, 1);
  drop("dropout4");
  layers_.push_back(std::make_unique<Dense<T>>(prefix("fc1"), shape, cfg_.fc1, 6.0, s));
  shape = layers_.back()->out_shape();
  layers_.push_back(std::make_unique<BatchNormRelu<T>>(prefix("fc1_bn"), shape, cfg_.bn_momentum,
                                                       cfg_.bn_eps));
  layers_.push_back(std::make_unique<Dense<T>>(prefix("fc2"), shape, cfg_.out, 3.0, s));
}

template <typename T>
Branch<T>::~Branch() = default;
template <typename T>
Branch<T>::Branch(Branch&&) noexcept = default;
template <typename T>
Branch<T>& Branch<T>::operator=(Branch&&) noexcept = default;

template <typename T>
void Branch<T>::forward(std::span<const T> input, std::size_t n, Mode mode,
                        std::uint64_t dropout_seed, std::vector<T>& out) {
  const std::size_t isz = layers_.front()->in_shape().size();
  const std::size_t osz = layers_.back()->out_shape().size();
  require(input.size() == n * isz,
          fmt::format("{}: expected {} x {} inputs, got {} values", name_, n, isz, input.size()));
  out.resize(n * osz);
  if (mode == Mode::kTrain) {
    acts_.resize(layers_.size() + 1);
    acts_[0].assign(input.begin(), input.end());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      acts_[i + 1].resize(n * layers_[i]->out_shape().size());
      layers_[i]->forward(acts_[i].data(), acts_[i + 1].data(), n, mode, dropout_seed);
    }
    std::copy(acts_.back().begin(), acts_.back().end(), out.begin());
    batch_ = n;
    return;
  }
  // Inference and calibration stream fixed-size chunks through two buffers.
  std::vector<T> a, b;
  const std::size_t parts = (n + kInferChunk - 1) / kInferChunk;
  for (std::size_t k = 0; k < parts; ++k) {
    const std::size_t start = k * n / parts;
    const std::size_t m = (k + 1) * n / parts - start;
    a.assign(input.begin() + static_cast<std::ptrdiff_t>(start * isz),
             input.begin() + static_cast<std::ptrdiff_t>((start + m) * isz));
    for (auto& layer : layers_) {
      b.resize(m * layer->out_shape().size());
      layer->forward(a.data(), b.data(), m, mode, dropout_seed);
      std::swap(a, b);
    }
    std::copy(a.begin(), a.end(), out.begin() + static_cast<std::ptrdiff_t>(start * osz));
  }
}

template <typename T>
void Branch<T>::backward(std::span<const T> dout) {
  require(batch_ > 0 && acts_.size() == layers_.size() + 1,
          fmt::format("{}: backward without a train-mode forward pass", name_));
  const std::size_t n = batch_;
  require(dout.size() == n * layers_.back()->out_shape().size(), "backward: gradient size mismatch");
  std::vector<T> cur(dout.begin(), dout.end()), prev;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    T* din = nullptr;
    if (i > 0) {
      prev.resize(n * layers_[i]->in_shape().size());
      din = prev.data();
    }
    layers_[i]->backward(acts_[i].data(), acts_[i + 1].data(), cur.data(), din, n);
    if (i > 0) std::swap(cur, prev);
  }
}

template <typename T>
std::vector<Param<T>*> Branch<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& l : layers_) l->collect(out);
  return out;
}

template <typename T>
void Branch<T>::zero_grad() {
  for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
void Branch<T>::release() {
  acts_.clear();
  acts_.shrink_to_fit();
  batch_ = 0;
}

template <typename T>
void Branch<T>::calibrate(std::span<const T> input, std::size_t n) {
  for (auto& l : layers_) l->begin_calibration();
  std::vector<T> out;
  forward(input, n, Mode::kCalibrate, 0, out);
  for (auto& l : layers_) l->end_calibration();
}

template <typename T>
std::vector<LayerTrace> Branch<T>::shape_trace() const {
  std::vector<LayerTrace> out;
  for (const auto& l : layers_) {
    if (!l->traced()) continue;
    std::string n = l->name().substr(name_.size() + 1);
    out.push_back({n, l->out_shape()});
  }
  return out;
}

template <typename T>
T triplet_loss(std::span<const T> a, std::span<const T> p, std::span<const T> n, T alpha) {
  require(a.size() == p.size() && a.size() == n.size(), "triplet_loss: dimension mismatch");
  T dp = 0, dn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dp += (a[i] - p[i]) * (a[i] - p[i]);
    dn += (a[i] - n[i]) * (a[i] - n[i]);
  }
  return std::max(T(0), dp - dn + alpha);
}

template <typename T>
T batch_triplet_loss(std::span<const T> emb, std::size_t dim, std::span<const Triplet> triplets,
                     T alpha, std::vector<T>* grad) {
  if (grad) grad->assign(emb.size(), T(0));
  double total = 0.0;
  for (const auto& t : triplets) {
    const T* a = emb.data() + t.anchor * dim;
    const T* p = emb.data() + t.positive * dim;
    const T* q = emb.data() + t.negative * dim;
    T dp = 0, dn = 0;
    for (std::size_t i = 0; i < dim; ++i) {
      dp += (a[i] - p[i]) * (a[i] - p[i]);
      dn += (a[i] - q[i]) * (a[i] - q[i]);
    }
    const T l = dp - dn + alpha;
    if (!(l > T(0))) continue;
    total += static_cast<double>(l);
    if (!grad) continue;
    T* ga = grad->data() + t.anchor * dim;
    T* gp = grad->data() + t.positive * dim;
    T* gn = grad->data() + t.negative * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      ga[i] += T(2) * (q[i] - p[i]);
      gp[i] += T(2) * (p[i] - a[i]);
      gn[i] += T(2) * (a[i] - q[i]);
    }
  }
  return static_cast<T>(total);
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), loc_("loc", cfg.branch, seed), dir_("dir", cfg.branch, seed) {}

template <typename T>
std::vector<T> Model<T>::embed(std::span<const T> loc, std::span<const T> dir, std::size_t n,
                               Mode mode, std::uint64_t dropout_seed, EmbedStats* stats) {
  std::vector<T> yl, yd;
  loc_.forward(loc, n, mode, derive_seed(dropout_seed, "loc"), yl);
  dir_.forward(dir, n, mode, derive_seed(dropout_seed, "dir"), yd);
  const std::size_t d = static_cast<std::size_t>(cfg_.branch.out);
  const std::size_t dim = 2 * d;
  z_.resize(n * dim);
  norm_.resize(n);
  std::vector<T> f(n * dim);
  for (std::size_t s = 0; s < n; ++s) {
    std::copy(yl.begin() + static_cast<std::ptrdiff_t>(s * d), yl.begin() + static_cast<std::ptrdiff_t>((s + 1) * d),
              z_.begin() + static_cast<std::ptrdiff_t>(s * dim));
    std::copy(yd.begin() + static_cast<std::ptrdiff_t>(s * d), yd.begin() + static_cast<std::ptrdiff_t>((s + 1) * d),
              z_.begin() + static_cast<std::ptrdiff_t>(s * dim + d));
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += static_cast<double>(z_[s * dim + i]) * static_cast<double>(z_[s * dim + i]);
    const double nrm = std::sqrt(sq);
    norm_[s] = static_cast<T>(nrm);
    if (nrm < 1e-12) {
      if (stats) ++stats->zero_vectors;
      f[s * dim] = T(1);
      norm_[s] = T(0);
      continue;
    }
    for (std::size_t i = 0; i < dim; ++i) f[s * dim + i] = static_cast<T>(static_cast<double>(z_[s * dim + i]) / nrm);
  }
  return f;
}

template <typename T>
T Model<T>::train_loss(std::span<const T> loc, std::span<const T> dir, std::size_t n,
                       std::span<const Triplet> triplets, T alpha, std::uint64_t dropout_seed) {
  auto f = embed(loc, dir, n, Mode::kTrain, dropout_seed);
  return batch_triplet_loss<T>(f, embedding_dim(), triplets, alpha, nullptr);
}

template <typename T>
T Model<T>::loss_and_gradient(std::span<const T> loc, std::span<const T> dir, std::size_t n,
                              std::span<const Triplet> triplets, T alpha,
                              std::uint64_t dropout_seed) {
  zero_grad();
  auto f = embed(loc, dir, n, Mode::kTrain, dropout_seed);
  const std::size_t dim = embedding_dim();
  const std::size_t d = dim / 2;
  std::vector<T> gf;
  const T loss = batch_triplet_loss<T>(f, dim, triplets, alpha, &gf);
  std::vector<T> gl(n * d, T(0)), gd(n * d, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    if (norm_[s] == T(0)) continue;
    const T* fs = f.data() + s * dim;
    const T* gs = gf.data() + s * dim;
    T dot = 0;
    for (std::size_t i = 0; i < dim; ++i) dot += fs[i] * gs[i];
    for (std::size_t i = 0; i < dim; ++i) {
      const T g = (gs[i] - fs[i] * dot) / norm_[s];
      if (i < d) {
        gl[s * d + i] = g;
      } else {
        gd[s * d + i - d] = g;
      }
    }
  }
  loc_.backward(gl);
  dir_.backward(gd);
  return loss;
}

template <typename T>
std::vector<Param<T>*> Model<T>::params() {
  auto a = loc_.params();
  auto b = dir_.params();
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

template <typename T>
void Model<T>::calibrate(std::span<const T> loc, std::span<const T> dir, std::size_t n) {
  loc_.calibrate(loc, n);
  dir_.calibrate(dir, n);
}

template <typename T>
void Model<T>::zero_grad() {
  loc_.zero_grad();
  dir_.zero_grad();
}

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, AdamConfig cfg) : cfg_(cfg) {
  for (auto* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p->value.size(), T(0));
    v_.emplace_back(p->value.size(), T(0));
  }
}

template <typename T>
StepResult Adam<T>::step(double lr) {
  bool any = false;
  for (auto* p : params_) {
    for (T g : p->grad) {
      if (!std::isfinite(static_cast<double>(g))) return StepResult::kSkippedNonFinite;
      any = any || g != T(0);
    }
  }
  if (!any) return StepResult::kSkippedZeroGradient;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mh = static_cast<double>(m[i]) / c1;
      const double vh = static_cast<double>(v[i]) / c2;
      p.value[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
  return StepResult::kApplied;
}

template <typename Dst, typename Src>
void copy_params(Model<Dst>& dst, Model<Src>& src) {
  auto d = dst.params();
  auto s = src.params();
  require(d.size() == s.size(), "copy_params: models differ");
  for (std::size_t k = 0; k < d.size(); ++k) {
    require(d[k]->shape == s[k]->shape, "copy_params: shape mismatch for " + d[k]->name);
    for (std::size_t i = 0; i < d[k]->value.size(); ++i) d[k]->value[i] = static_cast<Dst>(s[k]->value[i]);
  }
}

InputBatch make_inputs(std::span<const heatmap::HeatmapPair> pairs) {
  InputBatch b;
  b.n = pairs.size();
  b.loc.resize(b.n * heatmap::kCells);
  b.dir.resize(b.n * heatmap::kCells);
  for (std::size_t i = 0; i < b.n; ++i) {
    auto l = heatmap::normalized(pairs[i].location);
    auto d = heatmap::normalized(pairs[i].direction);
    std::copy(l.begin(), l.end(), b.loc.begin() + static_cast<std::ptrdiff_t>(i * heatmap::kCells));
    std::copy(d.begin(), d.end(), b.dir.begin() + static_cast<std::ptrdiff_t>(i * heatmap::kCells));
  }
  return b;
}

InputBatch gather(const InputBatch& all, std::span<const std::uint32_t> rows) {
  InputBatch b;
  b.n = rows.size();
  b.loc.resize(b.n * heatmap::kCells);
  b.dir.resize(b.n * heatmap::kCells);
  for (std::size_t i = 0; i < b.n; ++i) {
    const auto src = static_cast<std::ptrdiff_t>(rows[i] * heatmap::kCells);
    std::copy(all.loc.begin() + src, all.loc.begin() + src + heatmap::kCells,
              b.loc.begin() + static_cast<std::ptrdiff_t>(i * heatmap::kCells));
    std::copy(all.dir.begin() + src, all.dir.begin() + src + heatmap::kCells,
              b.dir.begin() + static_cast<std::ptrdiff_t>(i * heatmap::kCells));
  }
  return b;
}

template class Layer<float>;
template class Layer<double>;
template class Branch<float>;
template class Branch<double>;
template class Model<float>;
template class Model<double>;
template class Adam<float>;
template class Adam<double>;
template float triplet_loss<float>(std::span<const float>, std::span<const float>,
                                   std::span<const float>, float);
template double triplet_loss<double>(std::span<const double>, std::span<const double>,
                                     std::span<const double>, double);
template float batch_triplet_loss<float>(std::span<const float>, std::size_t,
                                         std::span<const Triplet>, float, std::vector<float>*);
template double batch_triplet_loss<double>(std::span<const double>, std::size_t,
                                           std::span<const Triplet>, double, std::vector<double>*);
template void copy_params<float, float>(Model<float>&, Model<float>&);
template void copy_params<double, float>(Model<double>&, Model<float>&);
template void copy_params<float, double>(Model<float>&, Model<double>&);
template void copy_params<double, double>(Model<double>&, Model<double>&);

}  // namespace sixmap::net
