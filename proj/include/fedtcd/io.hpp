#pragma once

// On-disk formats.  All binary files are little-endian: a four-byte magic, a
// u16 version, then a fixed header and payload (see docs/formats.md).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedtcd/dism.hpp"
#include "fedtcd/fed.hpp"
#include "fedtcd/synth.hpp"

namespace fedtcd {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// "DDIC": u32 K, D, T, L; K x (u32 client_id, u64 n_k); doubles [client][sample][t][d].
std::vector<std::uint8_t> encode_dataset(std::span<const TimeSeriesPanel> panels, std::size_t L);
std::vector<TimeSeriesPanel> decode_dataset(std::span<const std::uint8_t> bytes, std::size_t* L = nullptr);

// "DDGT": u32 T, D, L; W_true, A_true doubles; oracle masks one byte per entry.
std::vector<std::uint8_t> encode_truth(const GroundTruth& truth);
GroundTruth decode_truth(std::span<const std::uint8_t> bytes);

// "DDPS": shapes, sampled times, thresholds, then S, L_soft, S_A, L_soft_A
// bit-packed LSB-first, each mask padded to a whole byte.
std::vector<std::uint8_t> encode_priors(const PriorSet& priors);
PriorSet decode_priors(std::span<const std::uint8_t> bytes);

// "DDCK": model shape, next round, flat parameters.
std::vector<std::uint8_t> encode_checkpoint(const DctoState& state);
DctoState decode_checkpoint(std::span<const std::uint8_t> bytes);

// "DDGE": u32 T, D, L; W, A doubles; S, S_A bit-packed.
std::vector<std::uint8_t> encode_estimate(const GraphEstimate& estimate);
GraphEstimate decode_estimate_file(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> mask);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count);

// Columns sample,t,V1..VD; one row per (sample, t).
std::string panel_csv(const TimeSeriesPanel& panel);
// Columns round,client,step,total,mse,dag,soft_w,soft_a.
std::string loss_curve_csv(std::span<const StepLog> steps);
// One row per (round, client); wall times go to timings.csv instead.
std::string round_log_csv(std::span<const RoundLog> rounds);
// Human-readable per-sampled-time mask summary.
std::string mask_summary(const PriorSet& priors);

}  // namespace fedtcd
