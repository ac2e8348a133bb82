#pragma once

#include <zlib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vialign/rng.hpp"
#include "vialign/types.hpp"

namespace vialign {

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IdxBadMagic : IdxError {
  using IdxError::IdxError;
};
struct IdxUnsupportedType : IdxError {
  using IdxError::IdxError;
};
struct IdxTruncated : IdxError {
  using IdxError::IdxError;
};

// Dense unsigned-byte tensor in the IDX container format: 4-byte magic
// (00 00 08 rank), rank big-endian u32 dims, then the payload row-major.
struct IdxTensor {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  bool operator==(const IdxTensor& o) const {
    return dims == o.dims && data == o.data;
  }
};

inline IdxTensor parse_idx(const std::uint8_t* bytes, std::size_t len) {
  if (len < 4) throw IdxTruncated("idx: header cut short");
  if (bytes[0] != 0 || bytes[1] != 0) throw IdxBadMagic("idx: bad magic bytes");
  if (bytes[2] != 0x08) {
    throw IdxUnsupportedType("idx: only unsigned-byte payload (type 0x08) supported");
  }
  const unsigned rank = bytes[3];
  if (rank == 0) throw IdxBadMagic("idx: zero-rank tensor");

  std::size_t off = 4;
  IdxTensor t;
  t.dims.reserve(rank);
  std::size_t total = 1;
  for (unsigned k = 0; k < rank; ++k) {
    if (len < off + 4) throw IdxTruncated("idx: dimension header cut short");
    const std::uint32_t d = (std::uint32_t(bytes[off]) << 24) |
                            (std::uint32_t(bytes[off + 1]) << 16) |
                            (std::uint32_t(bytes[off + 2]) << 8) |
                            std::uint32_t(bytes[off + 3]);
    off += 4;
    t.dims.push_back(d);
    if (d != 0 && total > std::size_t(-1) / d) throw IdxBadMagic("idx: dims overflow");
    total *= d;
  }
  if (len < off + total) throw IdxTruncated("idx: payload cut short");
  if (len > off + total) throw IdxError("idx: trailing bytes after payload");
  t.data.assign(bytes + off, bytes + off + total);
  return t;
}

inline IdxTensor parse_idx(const std::vector<std::uint8_t>& bytes) {
  return parse_idx(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> serialize_idx(const IdxTensor& t) {
  if (t.dims.empty() || t.dims.size() > 255) {
    throw std::invalid_argument("idx: rank must be in [1, 255]");
  }
  if (t.data.size() != t.count()) {
    throw std::invalid_argument("idx: payload size does not match dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * t.dims.size() + t.data.size());
  out.push_back(0);
  out.push_back(0);
  out.push_back(0x08);
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) {
    out.push_back(static_cast<std::uint8_t>(d >> 24));
    out.push_back(static_cast<std::uint8_t>(d >> 16));
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d));
  }
  out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

inline bool looks_gzipped(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& bytes) {
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw IdxError("gzip: inflateInit failed");
  }
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());

  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> buf(1 << 16);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IdxError("gzip: corrupt stream");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw IdxTruncated("gzip: stream cut short");
    }
  }
  inflateEnd(&zs);
  return out;
}

inline std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes) {
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 16 + MAX_WBITS, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("gzip: deflateInit failed");
  }
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> buf(1 << 16);
  int rc = Z_OK;
  do {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = deflate(&zs, Z_FINISH);
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  } while (rc == Z_OK);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("gzip: deflate failed");
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

// Loads an IDX file, transparently inflating gzip (sniffed from the 1f 8b
// header, not the file name).
inline IdxTensor load_idx(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (looks_gzipped(bytes)) bytes = gunzip(bytes);
  return parse_idx(bytes);
}

// A supervised dataset. X holds one example per row. Regression targets
// live in Y; class labels live in labels. Exactly one of the two is used,
// per `task`.
struct Dataset {
  TaskKind task = TaskKind::Regression;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Y;
  Eigen::VectorXi labels;

  int n() const { return static_cast<int>(X.rows()); }
  int in_dim() const { return static_cast<int>(X.cols()); }

  Dataset take(const std::vector<int>& idx) const {
    Dataset out;
    out.task = task;
    out.X.resize(static_cast<int>(idx.size()), X.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.X.row(static_cast<int>(k)) = X.row(idx[k]);
    if (task == TaskKind::Regression) {
      out.Y.resize(static_cast<int>(idx.size()), Y.cols());
      for (std::size_t k = 0; k < idx.size(); ++k) out.Y.row(static_cast<int>(k)) = Y.row(idx[k]);
    } else {
      out.labels.resize(static_cast<int>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) out.labels(static_cast<int>(k)) = labels(idx[k]);
    }
    return out;
  }

  void validate(int out_dim) const {
    if (X.rows() == 0) throw std::invalid_argument("dataset: empty");
    if (task == TaskKind::Regression) {
      if (Y.rows() != X.rows()) throw std::invalid_argument("dataset: X/Y row mismatch");
      if (Y.cols() != out_dim) throw std::invalid_argument("dataset: target width mismatch");
    } else {
      if (labels.size() != X.rows()) throw std::invalid_argument("dataset: X/label mismatch");
      for (int i = 0; i < labels.size(); ++i) {
        if (labels(i) < 0 || labels(i) >= out_dim) {
          throw std::invalid_argument("dataset: label out of range");
        }
      }
    }
    if (!X.allFinite()) throw std::invalid_argument("dataset: non-finite feature");
  }
};

// Flattens rank-3 image / rank-1 label tensors into a classification
// dataset with pixel values scaled to [0, 1].
inline Dataset images_to_dataset(const IdxTensor& images, const IdxTensor& labels) {
  if (images.dims.size() != 3) throw std::invalid_argument("images must be rank 3");
  if (labels.dims.size() != 1) throw std::invalid_argument("labels must be rank 1");
  const int n = static_cast<int>(images.dims[0]);
  const int d = static_cast<int>(images.dims[1] * images.dims[2]);
  if (static_cast<int>(labels.dims[0]) != n) {
    throw std::invalid_argument("image/label count mismatch");
  }
  Dataset ds;
  ds.task = TaskKind::Classification;
  ds.X.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      ds.X(i, j) = images.data[static_cast<std::size_t>(i) * d + j] / 255.0;
    }
  }
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels(i) = labels.data[static_cast<std::size_t>(i)];
  return ds;
}

// Per-feature standardization fitted on one dataset and applied to others.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& X) {
    Standardizer s;
    s.mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - s.mean.transpose();
    s.scale = (centered.array().square().colwise().mean().sqrt() + 1e-8).matrix();
    return s;
  }

  void apply(Eigen::MatrixXd& X) const {
    X = (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

// Picks n_subset indices with classes as balanced as the request allows
// (remainder spread over the lowest class ids), then shuffles the result
// so mini-batches are not class ordered.
inline std::vector<int> class_balanced_subset(const Eigen::VectorXi& labels, int n_subset,
                                              int num_classes, Rng& rng) {
  if (n_subset <= 0 || n_subset > labels.size()) {
    throw std::invalid_argument("subset size out of range");
  }
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < labels.size(); ++i) {
    pools[static_cast<std::size_t>(labels(i))].push_back(i);
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_subset));
  for (int c = 0; c < num_classes; ++c) {
    const int quota = n_subset / num_classes + (c < n_subset % num_classes ? 1 : 0);
    auto& pool = pools[static_cast<std::size_t>(c)];
    if (static_cast<int>(pool.size()) < quota) {
      throw std::invalid_argument("class " + std::to_string(c) + " has too few examples");
    }
    rng.shuffle(pool);
    out.insert(out.end(), pool.begin(), pool.begin() + quota);
  }
  rng.shuffle(out);
  return out;
}

// Assembles normalized train/test classification splits from raw image
// tensors: subset (class balanced, seeded), scale to [0, 1], standardize
// both splits with the train statistics. Subset size 0 keeps everything.
inline std::pair<Dataset, Dataset> build_image_split(const IdxTensor& train_images,
                                                     const IdxTensor& train_labels,
                                                     const IdxTensor& test_images,
                                                     const IdxTensor& test_labels,
                                                     int n_train, int n_test, int num_classes,
                                                     std::uint64_t seed) {
  Dataset train = images_to_dataset(train_images, train_labels);
  Dataset test = images_to_dataset(test_images, test_labels);
  Rng rng(seed);
  if (n_train > 0) train = train.take(class_balanced_subset(train.labels, n_train, num_classes, rng));
  if (n_test > 0) test = test.take(class_balanced_subset(test.labels, n_test, num_classes, rng));
  const Standardizer stats = Standardizer::fit(train.X);
  stats.apply(train.X);
  stats.apply(test.X);
  train.validate(num_classes);
  test.validate(num_classes);
  return {std::move(train), std::move(test)};
}

// 1-d regression toy: inputs drawn from two disjoint intervals
// [-1.5, -0.5] and [0.5, 1.5] (half the budget each, the gap probes
// extrapolation), targets y = sin(5x)*0.8 + 0.2x + eps with eps drawn
// N(0, noise_std^2).
inline Dataset synth_regression(int n, double noise_std, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("synth_regression: n must be positive");
  Rng rng(seed);
  Dataset ds;
  ds.task = TaskKind::Regression;
  ds.X.resize(n, 1);
  ds.Y.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const double x = (i % 2 == 0) ? rng.uniform(-1.5, -0.5) : rng.uniform(0.5, 1.5);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = std::sin(5.0 * x) * 0.8 + 0.2 * x + noise_std * rng.normal();
  }
  return ds;
}

struct SynthImageOptions {
  int num_classes = 10;
  int side = 28;
  int coarse = 7;
  double sample_jitter = 0.75;  // strength of the per-sample smooth field
  double pixel_noise = 0.25;    // iid per-pixel noise
};

namespace detail {

// Bilinear upsample of a coarse square field to side x side.
inline Eigen::MatrixXd upsample(const Eigen::MatrixXd& coarse, int side) {
  const int c = static_cast<int>(coarse.rows());
  Eigen::MatrixXd out(side, side);
  const double scale = static_cast<double>(c) / side;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, c - 1.0);
      const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, c - 1.0);
      const int y0 = std::min(static_cast<int>(sy), c - 2);
      const int x0 = std::min(static_cast<int>(sx), c - 2);
      const double fy = sy - y0;
      const double fx = sx - x0;
      out(y, x) = coarse(y0, x0) * (1 - fy) * (1 - fx) + coarse(y0 + 1, x0) * fy * (1 - fx) +
                  coarse(y0, x0 + 1) * (1 - fy) * fx + coarse(y0 + 1, x0 + 1) * fy * fx;
    }
  }
  return out;
}

}  // namespace detail

// Deterministic image classification toy with MNIST shapes: each class is
// a smooth random prototype field; samples add a smooth per-sample field
// plus pixel noise. Learnable by an MLP but not separable by trivial
// pixel statistics. Returns IDX tensors so the output can go through the
// same container format as real data.
inline std::pair<IdxTensor, IdxTensor> synth_images(int n, std::uint64_t seed,
                                                    const SynthImageOptions& opt = {}) {
  if (n <= 0) throw std::invalid_argument("synth_images: n must be positive");
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> protos;
  protos.reserve(static_cast<std::size_t>(opt.num_classes));
  for (int c = 0; c < opt.num_classes; ++c) {
    Eigen::MatrixXd coarse(opt.coarse, opt.coarse);
    for (int i = 0; i < opt.coarse; ++i)
      for (int j = 0; j < opt.coarse; ++j) coarse(i, j) = rng.normal();
    protos.push_back(detail::upsample(coarse, opt.side));
  }

  IdxTensor images;
  images.dims = {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(opt.side),
                 static_cast<std::uint32_t>(opt.side)};
  images.data.resize(static_cast<std::size_t>(n) * opt.side * opt.side);
  IdxTensor labels;
  labels.dims = {static_cast<std::uint32_t>(n)};
  labels.data.resize(static_cast<std::size_t>(n));

  Eigen::MatrixXd coarse(opt.coarse, opt.coarse);
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.num_classes)));
    labels.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(c);
    for (int a = 0; a < opt.coarse; ++a)
      for (int b = 0; b < opt.coarse; ++b) coarse(a, b) = rng.normal();
    const Eigen::MatrixXd jitter = detail::upsample(coarse, opt.side);
    for (int y = 0; y < opt.side; ++y) {
      for (int x = 0; x < opt.side; ++x) {
        const double v = protos[static_cast<std::size_t>(c)](y, x) +
                         opt.sample_jitter * jitter(y, x) + opt.pixel_noise * rng.normal();
        const double p = std::clamp(0.5 + 0.3 * v, 0.0, 1.0);
        images.data[(static_cast<std::size_t>(i) * opt.side + y) * opt.side + x] =
            static_cast<std::uint8_t>(std::lround(p * 255.0));
      }
    }
  }
  return {std::move(images), std::move(labels)};
}

}  // namespace vialign
