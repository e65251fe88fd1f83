#include "djsr/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "djsr/image_io.hpp"

namespace djsr {

namespace fs = std::filesystem;

std::vector<std::pair<int64_t, int64_t>> plan_downsize_steps(int64_t h, int64_t w, double step) {
    if (!(step > 1.0)) throw ArgumentError("downsize step must be > 1");
    const int64_t th = h / 2, tw = w / 2;
    std::vector<std::pair<int64_t, int64_t>> plan;
    int64_t ch = h, cw = w;
    for (;;) {
        int64_t nh = std::llround(static_cast<double>(ch) / step);
        int64_t nw = std::llround(static_cast<double>(cw) / step);
        if (nh <= th || nw <= tw) break;
        if (nh == ch && nw == cw) break;  // rounding stalled on a tiny input
        plan.emplace_back(nh, nw);
        ch = nh;
        cw = nw;
    }
    plan.emplace_back(th, tw);
    return plan;
}

Image build_ground_truth(const Image& src, double step, int r, const CfaSpec& cfa) {
    cfa.validate();
    if (src.channels != 3) throw DimensionError("ground truth source must be 3-channel");
    const int64_t block = 2 * static_cast<int64_t>(r) * cfa.period;
    if (src.height / 2 < block || src.width / 2 < block)
        throw ArgumentError("source image too small: needs at least " +
                            std::to_string(4 * block) + " pixels per side");

    Image cur = src;
    for (auto [nh, nw] : plan_downsize_steps(src.height, src.width, step))
        cur = resize_bilinear(cur, nh, nw);

    const int64_t gh = (cur.height / block) * block;
    const int64_t gw = (cur.width / block) * block;
    Image out = Image::zeros(3, gh, gw);
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < gh; ++y)
            for (int64_t x = 0; x < gw; ++x) out.at(c, y, x) = cur.at(c, y, x);
    return out;
}

Image build_input(const Image& gt, int r, const CfaSpec& cfa) {
    return form_bayer(gt, r, cfa, 0.0);
}

namespace {

Image crop(const Image& img, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    Image out = Image::zeros(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

PatchPair sample_one(const Image& gt, const Image& bayer, int r, int period, int patch,
                     uint64_t seed, uint64_t index, int64_t source_id) {
    std::mt19937_64 eng(mix_seed(seed, index));
    const int64_t max_oy = bayer.height - patch;
    const int64_t max_ox = bayer.width - patch;
    int64_t oy = static_cast<int64_t>(uniform_below(eng, static_cast<uint64_t>(max_oy + 1)));
    int64_t ox = static_cast<int64_t>(uniform_below(eng, static_cast<uint64_t>(max_ox + 1)));
    oy -= oy % period;
    ox -= ox % period;
    PatchPair pair;
    pair.bayer = crop(bayer, oy, ox, patch, patch);
    pair.target = crop(gt, r * oy, r * ox, static_cast<int64_t>(r) * patch,
                       static_cast<int64_t>(r) * patch);
    pair.source = source_id;
    pair.origin_y = r * oy;
    pair.origin_x = r * ox;
    return pair;
}

void check_pair_geometry(const Image& gt, const Image& bayer, int r, const CfaSpec& cfa,
                         int patch) {
    cfa.validate();
    if (patch < 1 || patch % cfa.period != 0)
        throw ArgumentError("patch size must be a positive multiple of the CFA period");
    if (bayer.channels != 1 || gt.channels != 3)
        throw DimensionError("expected single-channel bayer and 3-channel ground truth");
    if (gt.height != bayer.height * r || gt.width != bayer.width * r)
        throw DimensionError("bayer dims must equal ground-truth dims divided by r");
    if (patch > bayer.height || patch > bayer.width)
        throw DimensionError("patch larger than image");
}

}  // namespace

std::vector<PatchPair> sample_patches(const Image& gt, const Image& bayer, int r,
                                      const CfaSpec& cfa, int patch, int64_t count,
                                      uint64_t seed, int64_t source_id) {
    check_pair_geometry(gt, bayer, r, cfa, patch);
    std::vector<PatchPair> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i)
        out.push_back(sample_one(gt, bayer, r, cfa.period, patch, seed,
                                 static_cast<uint64_t>(i), source_id));
    return out;
}

PatchPair patch_at_index(const std::vector<ImagePair>& corpus, int r, const CfaSpec& cfa,
                         int patch, uint64_t seed, uint64_t index) {
    if (corpus.empty()) throw ArgumentError("empty corpus");
    std::mt19937_64 eng(mix_seed(seed ^ 0x636f7270ull, index));
    const auto which = uniform_below(eng, corpus.size());
    const ImagePair& img = corpus[which];
    check_pair_geometry(img.gt, img.bayer, r, cfa, patch);
    // independent sub-stream for the in-image origin
    PatchPair pair = sample_one(img.gt, img.bayer, r, cfa.period, patch, seed ^ index,
                                0x6f726967ull, static_cast<int64_t>(which));
    return pair;
}

// ===== hashing =====

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i)
        hex << "0123456789abcdef"[digest[i] >> 4] << "0123456789abcdef"[digest[i] & 15];
    return hex.str();
}

namespace {

std::string sha256_string(const std::string& s) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, s.data(), s.size());
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i)
        hex << "0123456789abcdef"[digest[i] >> 4] << "0123456789abcdef"[digest[i] & 15];
    return hex.str();
}

std::string pair_hash(const fs::path& gt, const fs::path& bayer) {
    return sha256_string(sha256_file(gt) + sha256_file(bayer));
}

std::string content_hash(const DatasetManifest& m) {
    std::string all;
    for (const auto& e : m.entries) all += e.sha256;
    return sha256_string(all);
}

}  // namespace

// ===== manifest =====

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    char stepbuf[64];
    std::snprintf(stepbuf, sizeof(stepbuf), "%.17g", manifest.step);
    out << "# djsr dataset manifest v1\n";
    out << "# step = " << stepbuf << "\n";
    out << "# r = " << manifest.r << "\n";
    out << "# cfa = " << manifest.cfa << "\n";
    out << "# content = " << content_hash(manifest) << "\n";
    for (const auto& e : manifest.entries)
        out << e.gt_path << "\t" << e.bayer_path << "\t" << e.sha256 << "\n";
    if (!out) throw IoError("short write to " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    DatasetManifest m;
    std::string line;
    std::string stored_content;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            std::string val = line.substr(eq + 1);
            auto trim = [](std::string& s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t") + 1);
            };
            trim(key);
            trim(val);
            if (key == "step") m.step = std::stod(val);
            else if (key == "r") m.r = std::stoi(val);
            else if (key == "cfa") m.cfa = val;
            else if (key == "content") stored_content = val;
            continue;
        }
        std::istringstream row(line);
        ManifestEntry e;
        if (!std::getline(row, e.gt_path, '\t') || !std::getline(row, e.bayer_path, '\t') ||
            !std::getline(row, e.sha256))
            throw CorruptFileError(path.string() + ": malformed manifest row");
        m.entries.push_back(std::move(e));
    }
    if (m.entries.empty()) throw CorruptFileError(path.string() + ": empty manifest");
    m.content = content_hash(m);
    if (!stored_content.empty() && stored_content != m.content)
        throw CorruptFileError(path.string() + ": content hash mismatch");
    return m;
}

std::vector<ImagePair> load_pairs(const fs::path& manifest_path) {
    DatasetManifest m = load_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    const CfaSpec cfa = cfa_by_name(m.cfa);
    std::vector<ImagePair> pairs;
    pairs.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        fs::path gt_file = base / e.gt_path;
        fs::path bayer_file = base / e.bayer_path;
        if (!fs::exists(gt_file) || !fs::exists(bayer_file))
            throw IoError("manifest references missing file: " + e.gt_path);
        if (pair_hash(gt_file, bayer_file) != e.sha256)
            throw CorruptFileError("hash mismatch for " + e.gt_path);
        ImagePair pair;
        pair.gt = read_png(gt_file.string());
        pair.bayer = build_input(pair.gt, m.r, cfa);
        pair.name = gt_file.stem().string();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

Image quantize16(const Image& img) {
    Image out = img;
    for (double& v : out.data)
        v = std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0;
    return out;
}

BuildResult build_dataset(const fs::path& input_dir, const fs::path& output_dir, double step,
                          int r, const CfaSpec& cfa, const std::string& cfa_name) {
    if (!fs::is_directory(input_dir))
        throw IoError("input directory does not exist: " + input_dir.string());
    fs::create_directories(output_dir);

    std::vector<fs::path> sources;
    for (const auto& entry : fs::directory_iterator(input_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") sources.push_back(entry.path());
    }
    std::sort(sources.begin(), sources.end());

    BuildResult result;
    DatasetManifest manifest;
    manifest.step = step;
    manifest.r = r;
    manifest.cfa = cfa_name;
    for (const fs::path& src_path : sources) {
        try {
            Image src = read_png(src_path.string());
            Image gt = quantize16(build_ground_truth(src, step, r, cfa));
            Image bayer = build_input(gt, r, cfa);

            const std::string stem = src_path.stem().string();
            fs::path gt_file = output_dir / (stem + "_gt.png");
            fs::path bayer_file = output_dir / (stem + "_bayer.pgm");
            write_png(gt_file.string(), gt, 16);
            write_pgm(bayer_file.string(), bayer, 65535);

            ManifestEntry e;
            e.gt_path = gt_file.filename().string();
            e.bayer_path = bayer_file.filename().string();
            e.sha256 = pair_hash(gt_file, bayer_file);
            manifest.entries.push_back(std::move(e));
            ++result.built;
        } catch (const Error& err) {
            result.failed.push_back(src_path.filename().string() + ": " + err.what());
        }
    }
    if (result.built == 0)
        throw IoError("no usable images in " + input_dir.string());
    manifest.content = content_hash(manifest);
    result.manifest_path = output_dir / "manifest.tsv";
    save_manifest(result.manifest_path, manifest);
    return result;
}

}  // namespace djsr
