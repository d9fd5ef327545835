#pragma once

// Fixed inputs for the format-stability hashes. tests/golden_oracle.py
// rebuilds the same bytes in Python. Every value is a small
// dyadic rational, so it is exact in both float and double and the bytes
// cannot depend on the platform's math library.

#include "gmat/gmat.hpp"

namespace golden {

inline constexpr const char* kFeatureHash5x = "d09c533c27e18d85224ba8c3b7e066301dc42271a1ac5ac0e2b368c624477be7";
inline constexpr const char* kFeatureHash10x = "69d98f7763b9dda13b90cad341c4974d1bde17e5b7d10deafe29f3effd1ae7d9";
inline constexpr const char* kDescriptionHash = "fc95b2ee841d9c3a8dce96f09ebb660091a04e4a0e9b35d45155ded4c95ccb12";
inline constexpr const char* kCheckpointHash = "04a2df9ca0a137de15cef67555105e05db875040e5fad6346e5f28e0b0bb2406";
inline constexpr int kCheckpointEpoch = 3;
inline constexpr const char* kRccFixtureHash = "d48c029341616501724c815b3f111f7aea2364e870caa4048704e243f1ccb825";

inline gmat::Bag bag() {
  gmat::Bag b;
  b.slide_id = "golden-s0001";
  b.patient_id = "golden-p01";
  b.label = 2;
  b.features_5x.resize(3, 4);
  b.features_10x.resize(5, 4);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) b.features_5x(i, j) = static_cast<float>((i * 4 + j) % 7 - 3) / 8.0f;
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) b.features_10x(i, j) = static_cast<float>((i * 3 + j * 5) % 9 - 4) / 16.0f;
  return b;
}

inline gmat::DescriptionSet descriptions() {
  gmat::DescriptionSet set;
  auto add = [&](const std::string& label, std::vector<std::string> s, std::vector<gmat::Stage> st) {
    set.entries[label] = {label, std::move(s), std::move(st)};
  };
  using gmat::Stage;
  add("KIRC",
      {"Clear cell renal cell carcinoma is the most common renal cancer.",
       "Tumor cells have abundant clear cytoplasm.", "Loss of chromosome 3p inactivates the VHL gene.",
       "Patients often present with metastasis."},
      {Stage::General, Stage::Microscopic, Stage::Molecular, Stage::Clinical});
  add("KIRP",
      {"Papillary renal cell carcinoma is the second most common subtype.",
       "Tumor cells line papillae with fibrovascular cores.", "Trisomy of chromosomes 7 and 17 is typical.",
       "Low grade tumors have a favorable outcome."},
      {Stage::General, Stage::Microscopic, Stage::Molecular, Stage::Clinical});
  set.meta = gmat::DescriptionMeta{};
  set.meta->config_hash = "golden";
  return set;
}

inline gmat::GmatParams params() {
  gmat::GmatParams p;
  p.proj.resize(4, 3);
  for (Eigen::Index i = 0; i < p.proj.size(); ++i) p.proj.data()[i] = static_cast<double>(i % 5) / 4.0 - 0.5;
  p.train_proj = true;
  for (std::size_t s = 0; s < 2; ++s) {
    auto& a = p.attention[s];
    a.V.resize(2, 3);
    a.U.resize(2, 3);
    a.w.resize(2);
    for (Eigen::Index i = 0; i < 6; ++i) {
      a.V.data()[i] = static_cast<double>(i + static_cast<Eigen::Index>(s)) / 8.0;
      a.U.data()[i] = -static_cast<double>(i) / 16.0;
    }
    a.w << 0.25, -0.75;
  }
  p.log_tau = 2.25;
  p.fusion_logits << 0.5, -0.5;
  return p;
}

}  // namespace golden
