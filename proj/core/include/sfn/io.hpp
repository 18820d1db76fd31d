#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sfn/dataset.hpp"
#include "sfn/layers.hpp"
#include "sfn/training.hpp"

namespace sfn {

/// "SFN1", u32 rows, u32 cols (little-endian), rows*cols f32 row-major.
/// Rank-1 tensors are written as one row, scalars as [1 x 1].
void write_feature_file(const std::filesystem::path& path, const Tensor& values);
/// Returns [rows x cols]; throws DataError on bad magic or truncation.
Tensor read_feature_file(const std::filesystem::path& path);

/// Columns: video_id,user_id,supertrial_id,task,raw_label,rgb_path,flow_path,mask_path.
/// Empty group ids are read back as absent.
void write_index(const std::filesystem::path& path, const std::vector<VideoRecord>& records);
std::vector<VideoRecord> read_index(const std::filesystem::path& path);

/// Writes every feature file plus index.csv under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
/// Feature paths are resolved relative to the index file's directory.
Dataset load_dataset(const std::filesystem::path& index_path);

/// manifest.tsv (name, shape, file) plus one header+f32 file per tensor.
void save_checkpoint(const std::filesystem::path& dir, const ParamList& params);
/// Copies stored values into the matching tensors; names and shapes must
/// agree with the manifest.
void load_checkpoint(const std::filesystem::path& dir, const ParamList& params);

/// Per-window modality attention mass [T x 3] with a window,rgb,flow,mask header.
void write_trace_csv(const std::filesystem::path& path, const Tensor& modality_mass);

/// One JSON object per epoch: phase, branch, epoch, lr, mean_loss.
std::string epoch_log_jsonl(const std::vector<EpochRecord>& log);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);
/// Digest over the relative paths and contents of every regular file below
/// `dir`, in sorted order.
std::string directory_sha256(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace sfn
