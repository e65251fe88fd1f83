#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "djsr/imaging.hpp"

namespace djsr {

// Aligned training pair. bayer pixel (i,j) corresponds to the target block
// starting at (r*i, r*j); the bayer origin is a CFA-period multiple, so
// re-mosaicking the target reproduces the bayer patch bit-exactly.
struct PatchPair {
    Image bayer;   // 1ch, p x p
    Image target;  // 3ch, (r*p) x (r*p)
    int64_t source = 0;
    int64_t origin_y = 0, origin_x = 0;  // in HR (target) coordinates
};

struct ManifestEntry {
    std::string gt_path;     // relative to the manifest file
    std::string bayer_path;  // relative to the manifest file
    std::string sha256;      // over gt bytes followed by bayer bytes
};

struct DatasetManifest {
    double step = 1.25;
    int r = 2;
    std::string cfa = "rggb";
    std::string content;  // hash over the row hashes
    std::vector<ManifestEntry> entries;
};

// In-memory pair as consumed by training/eval. The Bayer frame is re-derived
// from the decoded ground truth at load time so the alignment invariant
// holds bit-exactly; the stored .pgm is the externally usable rendition.
struct ImagePair {
    Image gt;
    Image bayer;
    std::string name;
};

// Dim sequence of the progressive downsizing: each entry is the size after
// one 1/step resize, followed by the final exact half-size target.
std::vector<std::pair<int64_t, int64_t>> plan_downsize_steps(int64_t h, int64_t w, double step);

// Progressive 1/step resizes while the next step stays above half the
// original linear size, one exact resize to (H/2, W/2), then a crop to dims
// divisible by 2*r*period.
Image build_ground_truth(const Image& src, double step, int r, const CfaSpec& cfa);

// form_bayer with sigma = 0; requires gt dims divisible by r*period.
Image build_input(const Image& gt, int r, const CfaSpec& cfa);

// `count` pairs with uniformly random origins snapped down to CFA-period
// multiples in LR coordinates. Patch `index` is a pure function of
// (seed, index). patch must be a positive multiple of the CFA period.
std::vector<PatchPair> sample_patches(const Image& gt, const Image& bayer, int r,
                                      const CfaSpec& cfa, int patch, int64_t count,
                                      uint64_t seed, int64_t source_id = 0);

// Single deterministic patch from a multi-image corpus; the training batch
// stream is this function applied at consecutive indices.
PatchPair patch_at_index(const std::vector<ImagePair>& corpus, int r, const CfaSpec& cfa,
                         int patch, uint64_t seed, uint64_t index);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);  // header/format checks only

// Loads every pair, verifying file existence and row hashes.
std::vector<ImagePair> load_pairs(const std::filesystem::path& manifest_path);

// Quantization applied to ground truth before the Bayer derivation; identical
// to a 16-bit PNG write/read round trip.
Image quantize16(const Image& img);

struct BuildResult {
    std::filesystem::path manifest_path;
    int built = 0;
    std::vector<std::string> failed;  // unreadable/undersized inputs
};

// Builds <stem>_gt.png + <stem>_bayer.pgm per usable source image plus
// manifest.tsv. Sources are processed in sorted name order.
BuildResult build_dataset(const std::filesystem::path& input_dir,
                          const std::filesystem::path& output_dir, double step, int r,
                          const CfaSpec& cfa, const std::string& cfa_name);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace djsr
