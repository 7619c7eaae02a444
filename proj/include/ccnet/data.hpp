#pragma once

// Multi-modal identity data: synthetic generation with controllable sample
// and modality discrepancies, JSONL manifest ingestion, PK mini-batch
// sampling, and the embedding binary format.

#include "ccnet/numkit.hpp"

#include <array>
#include <cstdint>
#include <optional>

namespace ccnet {

constexpr int kModalityCount = 3;
extern const std::array<const char*, kModalityCount> kModalityNames;  // rgb, nir, tir

enum class Split { Train, Gallery, Query };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

// One identity observation: per-modality input vectors plus a presence mask
// and the capture-session time label.
struct Sample {
  int identity = 0;
  int time_label = 0;
  Split split = Split::Train;
  std::vector<std::optional<VectorXd>> modality_inputs;  // size kModalityCount
  std::vector<bool> mask;                                // presence per modality
  std::optional<int> camera;
  std::optional<int> viewpoint;

  int present_count() const;
};

struct DatasetManifest {
  std::vector<Sample> samples;

  std::vector<int> indices_of(Split split) const;
  Eigen::Index input_dim() const;  // shared dim of all present vectors
  // Checks mask consistency, one shared dim, nonempty samples, and that
  // every query identity has a gallery entry with a differing time label.
  void validate() const;
};

struct SynthConfig {
  int id_count = 20;
  int samples_per_id = 8;
  int dim = 16;
  double modality_offset_scale = 2.5;
  double sample_noise_scale = 0.6;
  double distortion_rate = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
};

// Per identity a base vector; per modality a shared offset; per sample
// session-correlated noise plus small jitter; with probability
// distortion_rate one modality of a sample is heavily corrupted. Identities
// split half train, half test; per test identity the first quarter of
// samples (at least one) are queries, the rest gallery.
DatasetManifest generate_synthetic(const SynthConfig& cfg);

// P identity groups of K manifest indices each; groups never mix identities.
struct MiniBatch {
  std::vector<std::vector<int>> sample_indices;  // [P][K]
  std::vector<int> labels;                       // identity per group
};

// Identities with fewer than K train samples are drawn with replacement.
MiniBatch pk_sample(const DatasetManifest& manifest, int p, int k, Rng& rng);

// ---------------------------------------------------------------------------
// JSONL manifest: one record per line,
//   {"id": int, "time": int, "split": "train|gallery|query",
//    "modality": {"rgb": [...], "nir": [...], "tir": [...]}}
// Any modality key may be omitted (drives the mask); optional "cam" and
// "view" integer fields feed the camera/viewpoint protocols.

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// ---------------------------------------------------------------------------
// Embedding block: magic "CCNF", version u32, count u32, dim u32, then
// count*dim little-endian f32 values row-major.

void save_embeddings(const std::string& path, const std::vector<VectorXd>& rows);
std::vector<VectorXd> load_embeddings(const std::string& path);

}  // namespace ccnet
