#include "sfn/dataset.hpp"

#include <unordered_set>

namespace sfn {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::rgb:
      return "rgb";
    case Modality::flow:
      return "flow";
    case Modality::mask:
      return "mask";
  }
  return "unknown";
}

Modality parse_modality(std::string_view name) {
  if (name == "rgb") return Modality::rgb;
  if (name == "flow") return Modality::flow;
  if (name == "mask") return Modality::mask;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected rgb, flow or mask)");
}

std::size_t Dataset::index_of(const std::string& video_id) const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].video_id == video_id) return i;
  }
  throw DataError("no video with id '" + video_id + "'");
}

void Dataset::validate(double label_min, double label_max) const {
  if (features.size() != records.size()) {
    throw DataError("dataset has " + std::to_string(records.size()) + " records but " +
                    std::to_string(features.size()) + " feature sets");
  }
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!seen.insert(r.video_id).second) throw DataError("duplicate video id '" + r.video_id + "'");
    if (r.raw_label < label_min || r.raw_label > label_max) {
      throw DataError("video '" + r.video_id + "' label " + std::to_string(r.raw_label) +
                      " outside [" + std::to_string(label_min) + ", " + std::to_string(label_max) + "]");
    }
    const auto& f = features[i];
    for (const auto& seq : f) {
      if (!seq.values.defined() || seq.values.rank() != 2) {
        throw DataError("video '" + r.video_id + "' is missing " +
                        std::string(modality_name(seq.modality)) + " features");
      }
      if (seq.values.shape() != f[0].values.shape()) {
        throw DataError("video '" + r.video_id + "' modalities disagree in shape: " +
                        shape_to_string(seq.values.shape()) + " vs " +
                        shape_to_string(f[0].values.shape()));
      }
    }
  }
}

}  // namespace sfn
