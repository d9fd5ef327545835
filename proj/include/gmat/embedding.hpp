#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/rng.hpp"
#include "gmat/text.hpp"

namespace gmat {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class EncoderKind { ToyText, ToyImage, External };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::ToyText: return "toy_text";
    case EncoderKind::ToyImage: return "toy_image";
    case EncoderKind::External: return "external";
  }
  return "external";
}

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "toy_text") return EncoderKind::ToyText;
  if (s == "toy_image") return EncoderKind::ToyImage;
  if (s == "external") return EncoderKind::External;
  throw Error(ErrorCode::ConfigError, "unknown encoder kind '" + s + "'");
}

struct EncoderSpec {
  std::string name = "toy";
  int dim = 64;
  std::uint64_t seed = 0;
  EncoderKind kind = EncoderKind::ToyText;
};

inline nlohmann::json to_json(const EncoderSpec& s) {
  return {{"name", s.name}, {"dim", s.dim}, {"seed", s.seed}, {"kind", to_string(s.kind)}};
}

inline EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
  EncoderSpec s;
  s.name = j.value("name", s.name);
  s.dim = j.value("dim", s.dim);
  s.seed = j.value("seed", s.seed);
  s.kind = parse_encoder_kind(j.value("kind", to_string(s.kind)));
  return s;
}

/// Number of hash buckets in the toy text encoder's bag-of-words layer.
inline constexpr int kHashBuckets = 4096;

inline void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::NonFiniteInput, "row " + std::to_string(i) + " cannot be normalized");
    }
    m.row(i) /= n;
  }
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFiniteInput, std::string(what) + " contains NaN or Inf");
}

/// Seeded Gaussian matrix scaled by 1/sqrt(cols), filled row-major.
inline Matrix seeded_projection(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix p(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) p(i, j) = rng.normal() * scale;
  return p;
}

/// Hashed bag-of-words followed by a fixed random projection into the shared
/// space. The projection is built once per encoder and reused for every call.
class TextEncoder {
 public:
  explicit TextEncoder(EncoderSpec spec) : spec_(std::move(spec)) {
    require(spec_.kind == EncoderKind::ToyText, ErrorCode::ConfigError, "text encoder requires kind toy_text");
    require(spec_.dim >= 2, ErrorCode::SpecInvalid, "encoder dim must be at least 2");
    projection_ = seeded_projection(kHashBuckets, spec_.dim, derive_seed(spec_.seed, 0x7e47));
  }

  const EncoderSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  const Matrix& projection() const { return projection_; }

  int bucket(const std::string& word) const {
    return static_cast<int>(seeded_hash64(word, spec_.seed) % static_cast<std::uint64_t>(kHashBuckets));
  }

  Vector encode_one(const std::string& s) const {
    if (text::is_blank(s)) throw Error(ErrorCode::BlankText, "cannot encode blank text");
    const auto ws = text::words(s);
    if (ws.empty()) throw Error(ErrorCode::BlankText, "text has no word tokens: '" + s + "'");
    Vector v = Vector::Zero(spec_.dim);
    for (const auto& w : ws) v += projection_.row(bucket(w)).transpose();
    const double n = v.norm();
    if (!(n > 0.0)) throw Error(ErrorCode::BlankText, "text embeds to the zero vector: '" + s + "'");
    return v / n;
  }

  /// M×D, unit rows.
  Matrix encode(const std::vector<std::string>& texts) const {
    require(!texts.empty(), ErrorCode::InvalidArgument, "encode_text needs at least one text");
    Matrix out(static_cast<Eigen::Index>(texts.size()), spec_.dim);
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode_one(texts[i]).transpose();
    return out;
  }

 private:
  EncoderSpec spec_;
  Matrix projection_;
};

/// Patch-side encoder. toy_image projects raw features through a fixed
/// seeded matrix; external treats features as already living in the shared
/// space and only normalizes them.
class ImageEncoder {
 public:
  ImageEncoder(EncoderSpec spec, int input_dim) : spec_(std::move(spec)), input_dim_(input_dim) {
    require(spec_.dim >= 2, ErrorCode::SpecInvalid, "encoder dim must be at least 2");
    require(input_dim_ >= 1, ErrorCode::SpecInvalid, "feature dim must be positive");
    if (spec_.kind == EncoderKind::ToyImage) {
      projection_ = seeded_projection(input_dim_, spec_.dim, derive_seed(spec_.seed, 0x1a6e));
    } else if (spec_.kind == EncoderKind::External) {
      require(input_dim_ == spec_.dim, ErrorCode::DimMismatch, "external features must already have the shared dim");
    } else {
      throw Error(ErrorCode::ConfigError, "image encoder requires kind toy_image or external");
    }
  }

  static ImageEncoder with_projection(EncoderSpec spec, Matrix projection) {
    spec.kind = EncoderKind::ToyImage;
    ImageEncoder e(spec, static_cast<int>(projection.rows()));
    require(projection.cols() == spec.dim, ErrorCode::DimMismatch, "projection columns must equal encoder dim");
    e.projection_ = std::move(projection);
    return e;
  }

  const EncoderSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  int input_dim() const { return input_dim_; }
  const Matrix& projection() const { return projection_; }

  /// N×F features to N×D unit rows.
  Matrix encode(const Matrix& features) const {
    require(features.rows() >= 1, ErrorCode::InvalidArgument, "need at least one patch");
    require_finite(features, "patch features");
    if (features.cols() != input_dim_) {
      throw Error(ErrorCode::DimMismatch, "expected " + std::to_string(input_dim_) + " feature columns, got " +
                                              std::to_string(features.cols()));
    }
    Matrix out = spec_.kind == EncoderKind::External ? features : Matrix(features * projection_);
    normalize_rows(out);
    return out;
  }

 private:
  EncoderSpec spec_;
  int input_dim_;
  Matrix projection_;
};

}  // namespace gmat
