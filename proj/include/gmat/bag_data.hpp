#pragma once

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/description_store.hpp"
#include "gmat/embedding.hpp"
#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/rng.hpp"

namespace gmat {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Scale { X5 = 0, X10 = 1 };
inline constexpr std::array<Scale, 2> kScales = {Scale::X5, Scale::X10};

inline const char* scale_name(Scale s) { return s == Scale::X5 ? "5x" : "10x"; }

/// One slide: patch features at both magnifications.
struct Bag {
  std::string slide_id;
  std::string patient_id;
  int label = 0;
  FeatureMatrix features_5x;
  FeatureMatrix features_10x;

  const FeatureMatrix& features(Scale s) const { return s == Scale::X5 ? features_5x : features_10x; }
  FeatureMatrix& features(Scale s) { return s == Scale::X5 ? features_5x : features_10x; }
  int feature_dim() const { return static_cast<int>(features_5x.cols()); }
};

inline void check_bag(const Bag& b, int num_classes = -1) {
  for (auto s : kScales) {
    const auto& f = b.features(s);
    require(f.rows() >= 1, ErrorCode::InvalidArgument, b.slide_id + ": scale " + scale_name(s) + " has no patches");
    if (!f.allFinite()) throw Error(ErrorCode::NonFiniteInput, b.slide_id + ": non-finite features");
  }
  require(b.features_5x.cols() == b.features_10x.cols(), ErrorCode::DimMismatch, b.slide_id + ": scale feature dims differ");
  if (num_classes > 0 && (b.label < 0 || b.label >= num_classes)) {
    throw Error(ErrorCode::LabelOutOfRange, b.slide_id + ": label " + std::to_string(b.label));
  }
}

// ---------------------------------------------------------------------------
// Feature file: "GMATFEA1", u32 LE header length, compact JSON header
// {"dim","label","n","patient_id","scale","slide_id"}, then n*dim f32 LE.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'G', 'M', 'A', 'T', 'F', 'E', 'A', '1'};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline void put_f32_le(std::string& out, float f) { put_u32_le(out, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32_le(const std::string& in, std::size_t pos) { return std::bit_cast<float>(get_u32_le(in, pos)); }

}  // namespace detail

inline std::string encode_feature_file(const Bag& bag, Scale scale) {
  const auto& f = bag.features(scale);
  const nlohmann::json header = {{"slide_id", bag.slide_id}, {"patient_id", bag.patient_id}, {"label", bag.label},
                                 {"scale", scale_name(scale)}, {"n", f.rows()},          {"dim", f.cols()}};
  const auto h = header.dump();
  std::string out(kFeatureMagic, sizeof kFeatureMagic);
  detail::put_u32_le(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out.reserve(out.size() + static_cast<std::size_t>(f.size()) * 4);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (Eigen::Index j = 0; j < f.cols(); ++j) detail::put_f32_le(out, f(i, j));
  return out;
}

struct FeatureFile {
  nlohmann::json header;
  FeatureMatrix features;
};

inline FeatureFile decode_feature_file(const std::string& bytes, const std::string& origin = "feature file") {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) {
    throw Error(ErrorCode::FormatError, origin + ": bad magic");
  }
  const auto hlen = detail::get_u32_le(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(hlen)) throw Error(ErrorCode::FormatError, origin + ": truncated header");
  FeatureFile ff;
  ff.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen, nullptr, false);
  if (ff.header.is_discarded() || !ff.header.is_object()) throw Error(ErrorCode::FormatError, origin + ": header is not JSON");
  std::int64_t n = 0, dim = 0;
  try {
    n = ff.header.at("n").get<std::int64_t>();
    dim = ff.header.at("dim").get<std::int64_t>();
    (void)ff.header.at("slide_id").get<std::string>();
    (void)ff.header.at("patient_id").get<std::string>();
    (void)ff.header.at("label").get<int>();
    (void)ff.header.at("scale").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, origin + ": header fields: " + e.what());
  }
  if (n < 1 || dim < 1) throw Error(ErrorCode::FormatError, origin + ": bad shape");
  const std::size_t payload = static_cast<std::size_t>(n) * static_cast<std::size_t>(dim) * 4;
  if (bytes.size() != 12 + hlen + payload) throw Error(ErrorCode::FormatError, origin + ": payload size does not match shape");
  ff.features.resize(n, dim);
  std::size_t pos = 12 + hlen;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dim; ++j, pos += 4) ff.features(i, j) = detail::get_f32_le(bytes, pos);
  if (!ff.features.allFinite()) throw Error(ErrorCode::NonFiniteInput, origin + ": non-finite feature values");
  return ff;
}

inline std::string feature_file_name(const std::string& slide_id, Scale s) {
  return slide_id + "." + scale_name(s) + ".gfea";
}

inline void save_bag(const Bag& bag, const std::filesystem::path& dir) {
  check_bag(bag);
  std::filesystem::create_directories(dir);
  for (auto s : kScales) write_file((dir / feature_file_name(bag.slide_id, s)).string(), encode_feature_file(bag, s));
}

inline Bag bag_from_files(const std::string& path_5x, const std::string& path_10x) {
  Bag bag;
  for (auto s : kScales) {
    const auto& path = s == Scale::X5 ? path_5x : path_10x;
    auto ff = decode_feature_file(read_file(path), path);
    if (ff.header.at("scale").get<std::string>() != scale_name(s)) {
      throw Error(ErrorCode::FormatError, path + ": expected scale " + scale_name(s));
    }
    const auto sid = ff.header.at("slide_id").get<std::string>();
    if (s == Scale::X5) {
      bag.slide_id = sid;
      bag.patient_id = ff.header.at("patient_id").get<std::string>();
      bag.label = ff.header.at("label").get<int>();
    } else if (sid != bag.slide_id) {
      throw Error(ErrorCode::FormatError, path + ": slide id mismatch between scales");
    }
    bag.features(s) = std::move(ff.features);
  }
  if (bag.features_5x.cols() != bag.features_10x.cols()) throw Error(ErrorCode::FormatError, "scale feature dims differ");
  return bag;
}

inline Bag load_bag(const std::filesystem::path& dir, const std::string& slide_id) {
  auto bag = bag_from_files((dir / feature_file_name(slide_id, Scale::X5)).string(),
                            (dir / feature_file_name(slide_id, Scale::X10)).string());
  if (bag.slide_id != slide_id) throw Error(ErrorCode::FormatError, "file holds slide '" + bag.slide_id + "'");
  return bag;
}

// ---------------------------------------------------------------------------
// Dataset manifest: [{slide_id, patient_id, label, path_5x, path_10x}, ...],
// paths relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string slide_id;
  std::string patient_id;
  int label = 0;
  std::string path_5x;
  std::string path_10x;
};

inline void save_dataset(const std::vector<Bag>& bags, const std::filesystem::path& dir) {
  const auto feat_dir = dir / "features";
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& b : bags) {
    save_bag(b, feat_dir);
    manifest.push_back({{"slide_id", b.slide_id},
                        {"patient_id", b.patient_id},
                        {"label", b.label},
                        {"path_5x", "features/" + feature_file_name(b.slide_id, Scale::X5)},
                        {"path_10x", "features/" + feature_file_name(b.slide_id, Scale::X10)}});
  }
  write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path.string()), nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw Error(ErrorCode::FormatError, path.string() + ": manifest must be a JSON array");
  std::vector<ManifestEntry> out;
  try {
    for (const auto& e : j) {
      out.push_back({e.at("slide_id").get<std::string>(), e.at("patient_id").get<std::string>(), e.at("label").get<int>(),
                     e.at("path_5x").get<std::string>(), e.at("path_10x").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + ex.what());
  }
  return out;
}

/// Loads every bag listed in a manifest, checking headers against entries.
inline std::vector<Bag> load_dataset(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  std::vector<Bag> bags;
  for (const auto& e : load_manifest(manifest_path)) {
    auto b = bag_from_files((base / e.path_5x).string(), (base / e.path_10x).string());
    if (b.slide_id != e.slide_id || b.patient_id != e.patient_id || b.label != e.label) {
      throw Error(ErrorCode::FormatError, "manifest entry '" + e.slide_id + "' disagrees with its feature header");
    }
    bags.push_back(std::move(b));
  }
  return bags;
}

// ---------------------------------------------------------------------------
// Patient-level splitting.
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::map<std::string, std::string> patient_map;  // slide_id -> patient_id
};

inline nlohmann::json to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"patient_map", s.patient_map}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
  try {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>(), j.at("patient_map").get<std::map<std::string, std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("split file: ") + e.what());
  }
}

/// Shuffles patients with the seed and cuts them at rounded cumulative ratio
/// boundaries; every slide follows its patient.
inline DatasetSplit patient_split(const std::vector<Bag>& bags, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) require(r > 0.0, ErrorCode::InvalidArgument, "split ratios must be positive");
  require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) <= 1e-9, ErrorCode::InvalidArgument, "split ratios must sum to 1");

  DatasetSplit split;
  std::set<std::string> patient_set;
  for (const auto& b : bags) {
    require(split.patient_map.emplace(b.slide_id, b.patient_id).second, ErrorCode::InvalidArgument,
            "duplicate slide id '" + b.slide_id + "'");
    patient_set.insert(b.patient_id);
  }
  std::vector<std::string> patients(patient_set.begin(), patient_set.end());
  Rng rng(seed);
  rng.shuffle(patients);

  const double p = static_cast<double>(patients.size());
  const auto b1 = static_cast<std::size_t>(std::llround(ratios[0] * p));
  const auto b2 = static_cast<std::size_t>(std::llround((ratios[0] + ratios[1]) * p));
  if (b1 == 0 || b2 <= b1 || b2 >= patients.size()) {
    throw Error(ErrorCode::TooFewPatients,
                std::to_string(patients.size()) + " patients cannot fill three non-empty splits");
  }
  std::map<std::string, int> part;
  for (std::size_t i = 0; i < patients.size(); ++i) part[patients[i]] = i < b1 ? 0 : (i < b2 ? 1 : 2);
  for (const auto& b : bags) {
    switch (part[b.patient_id]) {
      case 0: split.train.push_back(b.slide_id); break;
      case 1: split.val.push_back(b.slide_id); break;
      default: split.test.push_back(b.slide_id); break;
    }
  }
  return split;
}

inline std::vector<Bag> select_bags(const std::vector<Bag>& bags, const std::vector<std::string>& ids) {
  std::map<std::string, const Bag*> by_id;
  for (const auto& b : bags) by_id[b.slide_id] = &b;
  std::vector<Bag> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    require(it != by_id.end(), ErrorCode::InvalidArgument, "unknown slide id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data with planted class facets.
// ---------------------------------------------------------------------------

struct SynthSpec {
  int num_classes = 3;
  int dim = 64;
  int patches_5x = 16;
  int patches_10x = 32;
  int slides_per_class = 20;
  int facets_per_class = 2;
  double signal_fraction = 0.5;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;
  int patients_per_class = 2;
  int words_per_sentence = 8;
  /// 0 keeps patches in the text space; otherwise patches are observed
  /// through a fixed seeded linear map into this many dimensions.
  int feature_dim = 0;
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"num_classes", s.num_classes},           {"dim", s.dim},
          {"patches_5x", s.patches_5x},             {"patches_10x", s.patches_10x},
          {"slides_per_class", s.slides_per_class}, {"facets_per_class", s.facets_per_class},
          {"signal_fraction", s.signal_fraction},   {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},                         {"patients_per_class", s.patients_per_class},
          {"words_per_sentence", s.words_per_sentence}, {"feature_dim", s.feature_dim}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.dim = j.value("dim", s.dim);
  s.patches_5x = j.value("patches_5x", s.patches_5x);
  s.patches_10x = j.value("patches_10x", s.patches_10x);
  s.slides_per_class = j.value("slides_per_class", s.slides_per_class);
  s.facets_per_class = j.value("facets_per_class", s.facets_per_class);
  s.signal_fraction = j.value("signal_fraction", s.signal_fraction);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  s.patients_per_class = j.value("patients_per_class", s.patients_per_class);
  s.words_per_sentence = j.value("words_per_sentence", s.words_per_sentence);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  return s;
}

struct SynthDataset {
  std::vector<Bag> bags;
  DescriptionSet descriptions;
  std::vector<std::string> class_names;
  /// prototypes[c][k]: unit vector of facet k of class c.
  std::vector<std::vector<Vector>> prototypes;
  std::vector<std::vector<std::string>> facet_sentences;
};

inline std::string synth_class_name(int c) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "class_%02d", c);
  return buf;
}

namespace detail {

inline std::string synth_word(Rng& rng) {
  static constexpr const char* kOnsets = "bdfgklmnprstvz";
  static constexpr const char* kVowels = "aeiou";
  std::string w;
  for (int i = 0; i < 3; ++i) {
    w.push_back(kOnsets[rng.index(14)]);
    w.push_back(kVowels[rng.index(5)]);
  }
  return w;
}

}  // namespace detail

/// Builds bags whose signal patches sit near class facet prototypes, together
/// with one planted sentence per facet. Each prototype is the text encoder's
/// embedding of its sentence, so sentence and facet coincide exactly.
///
/// Each slide expresses one facet (drawn uniformly); each patch carries signal
/// with probability signal_fraction, otherwise it is a normalized Gaussian.
/// With a codebook, classes and facet sentences are drawn from its lists
/// instead of being composed from synthetic words.
inline SynthDataset synth_dataset(const SynthSpec& spec, const TextEncoder& encoder,
                                  const DescriptionSet* codebook = nullptr) {
  const int C = codebook ? static_cast<int>(codebook->entries.size()) : spec.num_classes;
  const int K = spec.facets_per_class;
  require(C >= 2 && C <= 100, ErrorCode::SpecInvalid, "need between 2 and 100 classes");
  require(K >= 1, ErrorCode::SpecInvalid, "facets_per_class must be at least 1");
  require(spec.signal_fraction > 0.0 && spec.signal_fraction <= 1.0, ErrorCode::SpecInvalid, "signal_fraction must be in (0, 1]");
  require(spec.noise_sigma >= 0.0 && std::isfinite(spec.noise_sigma), ErrorCode::SpecInvalid, "noise_sigma must be >= 0");
  require(spec.patches_5x >= 1 && spec.patches_10x >= 1, ErrorCode::SpecInvalid, "need at least one patch per scale");
  require(spec.slides_per_class >= 1, ErrorCode::SpecInvalid, "slides_per_class must be positive");
  require(spec.patients_per_class >= 1, ErrorCode::SpecInvalid, "patients_per_class must be positive");
  require(spec.words_per_sentence >= 1, ErrorCode::SpecInvalid, "words_per_sentence must be positive");
  require(spec.feature_dim >= 0, ErrorCode::SpecInvalid, "feature_dim must be >= 0");
  require(spec.dim == encoder.dim(), ErrorCode::DimMismatch, "synthetic dim must equal the text encoder dim");

  Rng rng(spec.seed);
  SynthDataset ds;
  if (codebook) {
    ds.class_names = codebook->class_labels();
  } else {
    for (int c = 0; c < C; ++c) ds.class_names.push_back(synth_class_name(c));
  }

  std::set<std::string> used_words;
  ds.descriptions.meta = DescriptionMeta{};
  ds.descriptions.meta->config_hash = sha256_hex(to_json(spec).dump());
  for (int c = 0; c < C; ++c) {
    const auto& name = ds.class_names[static_cast<std::size_t>(c)];
    std::vector<std::string> sentences;
    if (codebook) {
      const auto& pool = codebook->entries.at(name).sentences;
      require(static_cast<int>(pool.size()) >= K, ErrorCode::SpecInvalid, "codebook class '" + name + "' has fewer sentences than facets");
      std::vector<std::size_t> idx(pool.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(idx);
      for (int k = 0; k < K; ++k) sentences.push_back(pool[idx[static_cast<std::size_t>(k)]]);
    } else {
      for (int k = 0; k < K; ++k) {
        std::vector<std::string> ws;
        while (static_cast<int>(ws.size()) < spec.words_per_sentence) {
          auto w = detail::synth_word(rng);
          if (used_words.insert(w).second) ws.push_back(std::move(w));
        }
        auto s = text::join(ws, " ") + ".";
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        sentences.push_back(std::move(s));
      }
    }
    ClassDescriptionList list;
    list.class_label = name;
    std::vector<Vector> protos;
    for (int k = 0; k < K; ++k) {
      protos.push_back(encoder.encode_one(sentences[static_cast<std::size_t>(k)]));
      list.stages.push_back(static_cast<Stage>(k % 4));
    }
    list.sentences = sentences;
    ds.descriptions.entries[name] = std::move(list);
    ds.prototypes.push_back(std::move(protos));
    ds.facet_sentences.push_back(std::move(sentences));
  }

  const int D = spec.dim;
  const int F = spec.feature_dim > 0 ? spec.feature_dim : D;
  const Matrix observe = spec.feature_dim > 0 ? seeded_projection(D, F, derive_seed(spec.seed, 0x0b5e)) : Matrix();
  auto draw_patch = [&](const Vector* proto) {
    Vector v(D);
    if (proto) {
      for (int d = 0; d < D; ++d) v[d] = (*proto)[d] + spec.noise_sigma * rng.normal();
    } else {
      for (int d = 0; d < D; ++d) v[d] = rng.normal();
    }
    double n = v.norm();
    while (!(n > 0.0)) {  // measure-zero; redraw background
      for (int d = 0; d < D; ++d) v[d] = rng.normal();
      n = v.norm();
    }
    return Vector(v / n);
  };

  for (int c = 0; c < C; ++c) {
    const auto& name = ds.class_names[static_cast<std::size_t>(c)];
    for (int s = 0; s < spec.slides_per_class; ++s) {
      char sid[32], pid[32];
      std::snprintf(sid, sizeof sid, "-s%04d", s);
      std::snprintf(pid, sizeof pid, "-p%02d", s % spec.patients_per_class);
      Bag bag;
      bag.slide_id = name + sid;
      bag.patient_id = name + pid;
      bag.label = c;
      const auto facet = static_cast<std::size_t>(rng.index(static_cast<std::uint64_t>(K)));
      const Vector& proto = ds.prototypes[static_cast<std::size_t>(c)][facet];
      for (auto scale : kScales) {
        const int n = scale == Scale::X5 ? spec.patches_5x : spec.patches_10x;
        FeatureMatrix f(n, F);
        for (int i = 0; i < n; ++i) {
          const bool signal = rng.uniform() < spec.signal_fraction;
          const Vector v = draw_patch(signal ? &proto : nullptr);
          if (spec.feature_dim > 0) {
            f.row(i) = (v.transpose() * observe).cast<float>();
          } else {
            f.row(i) = v.cast<float>().transpose();
          }
        }
        bag.features(scale) = std::move(f);
      }
      ds.bags.push_back(std::move(bag));
    }
  }
  return ds;
}

}  // namespace gmat
