#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sfn/tensor.hpp"

namespace sfn {

enum class Modality { rgb = 0, flow = 1, mask = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::rgb, Modality::flow, Modality::mask};

std::string_view modality_name(Modality m);
/// Throws ConfigError for anything but "rgb", "flow" or "mask".
Modality parse_modality(std::string_view name);

/// One modality's per-segment features of one video, [T x d].
struct FeatureSequence {
  std::string video_id;
  Modality modality = Modality::rgb;
  Tensor values;

  [[nodiscard]] std::size_t length() const { return values.dim(0); }
  [[nodiscard]] std::size_t dim() const { return values.dim(1); }
};

/// Thrown for malformed or inconsistent dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VideoRecord {
  std::string video_id;
  std::optional<std::string> user_id;
  std::optional<std::string> supertrial_id;
  std::string task;
  double raw_label = 0.0;
  std::array<std::string, 3> feature_paths;  // indexed by Modality
};

/// Records plus their loaded features; features[i] belongs to records[i].
struct Dataset {
  std::vector<VideoRecord> records;
  std::vector<std::array<FeatureSequence, 3>> features;

  [[nodiscard]] std::size_t size() const { return records.size(); }
  /// Index of `video_id`; throws DataError when absent.
  [[nodiscard]] std::size_t index_of(const std::string& video_id) const;
  /// Throws DataError on duplicate ids, shape disagreements between
  /// modalities, or labels outside [label_min, label_max].
  void validate(double label_min, double label_max) const;
};

}  // namespace sfn
