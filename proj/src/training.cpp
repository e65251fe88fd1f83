#include "djsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "djsr/inference.hpp"
#include "djsr/metrics.hpp"

namespace djsr {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0))
        throw ConfigError("invalid ADAM hyperparameters");
    if (batch < 1 || halve_every < 1 || patch < 1 || val_patches < 1 || log_every < 1 ||
        checkpoint_every < 1 || val_every < 1)
        throw ConfigError("train config values must be positive");
    if (dtype != "f32") throw ConfigError("unsupported dtype '" + dtype + "'");
}

template <typename T>
OptimStateT<T> OptimStateT<T>::zeros_like(const ModelParamsT<T>& params) {
    OptimStateT st;
    for (auto& [name, t] : params.named_tensors()) {
        st.m.push_back(TensorT<T>::zeros(t->shape()));
        st.v.push_back(TensorT<T>::zeros(t->shape()));
    }
    return st;
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target, GradTapeT<T>* tape) {
    if (!(pred.shape() == target.shape()))
        throw DimensionError("mse_loss shape mismatch: " + to_string(pred.shape()) + " vs " +
                             to_string(target.shape()));
    TensorT<T> diff = add(pred, scale(target, T(-1), tape), tape);
    TensorT<T> sq = mul(diff, diff, tape);
    return scale(sum(sq, tape), T(1) / static_cast<T>(pred.numel()), tape);
}

double lr_at(uint64_t step, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(0.5, static_cast<double>(step / cfg.halve_every));
}

template <typename T>
void adam_step(ModelParamsT<T>& params, const GradMapT<T>& grads, OptimStateT<T>& state,
               double lr, const TrainConfig& cfg) {
    auto named = params.named_tensors();
    if (state.m.size() != named.size() || state.v.size() != named.size())
        throw ContractError("optimizer state does not mirror the parameter set");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < named.size(); ++i) {
        auto& [name, param] = named[i];
        auto it = grads.find(param->id());
        if (it == grads.end())
            throw ContractError("missing gradient for parameter " + name);
        if (!(it->second.shape() == param->shape()))
            throw DimensionError("gradient shape mismatch for " + name);
        std::span<T> p = param->mutable_values();
        std::span<const T> g = it->second.values();
        std::span<T> m = state.m[i].mutable_values();
        std::span<T> v = state.v[i].mutable_values();
        for (size_t j = 0; j < p.size(); ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p[j] = static_cast<T>(static_cast<double>(p[j]) -
                                  lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// ===== checkpoint serialization =====

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string header_text(const Checkpoint& ckpt) {
    std::ostringstream h;
    h << "model.c_filters=" << ckpt.model.c_filters << "\n";
    h << "model.n_blocks=" << ckpt.model.n_blocks << "\n";
    h << "model.cfa_period=" << ckpt.model.cfa_period << "\n";
    h << "model.upscale=" << ckpt.model.upscale << "\n";
    h << "model.res_kernel=" << ckpt.model.res_kernel << "\n";
    h << "train.lr0=" << fmt_double(ckpt.train.lr0) << "\n";
    h << "train.beta1=" << fmt_double(ckpt.train.beta1) << "\n";
    h << "train.beta2=" << fmt_double(ckpt.train.beta2) << "\n";
    h << "train.eps=" << fmt_double(ckpt.train.eps) << "\n";
    h << "train.batch=" << ckpt.train.batch << "\n";
    h << "train.halve_every=" << ckpt.train.halve_every << "\n";
    h << "train.max_steps=" << ckpt.train.max_steps << "\n";
    h << "train.seed=" << ckpt.train.seed << "\n";
    h << "train.dtype=" << ckpt.train.dtype << "\n";
    h << "train.patch=" << ckpt.train.patch << "\n";
    h << "train.checkpoint_every=" << ckpt.train.checkpoint_every << "\n";
    h << "train.val_every=" << ckpt.train.val_every << "\n";
    h << "train.val_patches=" << ckpt.train.val_patches << "\n";
    h << "train.log_every=" << ckpt.train.log_every << "\n";
    h << "step=" << ckpt.step << "\n";
    h << "opt.t=" << ckpt.opt.t << "\n";
    return h.str();
}

void append_tensor_record(std::string& out, const std::string& name, const Tensor& t) {
    if (name.size() > 0xffff) throw ContractError("tensor name too long");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(4);  // ndim
    const Shape& s = t.shape();
    for (int64_t d : {s.n, s.c, s.h, s.w}) put_u64(out, static_cast<uint64_t>(d));
    auto v = t.values();
    size_t off = out.size();
    out.resize(off + v.size() * sizeof(float));
    std::memcpy(out.data() + off, v.data(), v.size() * sizeof(float));
}

class Reader {
  public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    std::string_view take(size_t n) {
        if (pos_ + n > data_.size())
            throw CorruptFileError(path_ + ": truncated checkpoint");
        std::string_view out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }
    uint16_t u16() {
        auto b = take(2);
        return static_cast<uint16_t>(static_cast<unsigned char>(b[0]) |
                                     (static_cast<unsigned char>(b[1]) << 8));
    }
    uint32_t u32() {
        auto b = take(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
        return v;
    }
    uint64_t u64() {
        auto b = take(8);
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
        return v;
    }
    bool exhausted() const { return pos_ == data_.size(); }
    const std::string& path() const { return path_; }

  private:
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

std::map<std::string, std::string> parse_header(std::string_view text, const std::string& path) {
    std::map<std::string, std::string> kv;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            throw CorruptFileError(path + ": malformed header line");
        kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    return kv;
}

std::string require(const std::map<std::string, std::string>& kv, const std::string& key,
                    const std::string& path) {
    auto it = kv.find(key);
    if (it == kv.end()) throw CorruptFileError(path + ": missing header key " + key);
    return it->second;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    std::string blob;
    blob += "DJSR";
    put_u32(blob, 1);
    const std::string header = header_text(ckpt);
    put_u64(blob, header.size());
    blob += header;
    for (auto& [name, t] : ckpt.params.named_tensors()) append_tensor_record(blob, name, *t);
    auto named = ckpt.params.named_tensors();
    for (size_t i = 0; i < named.size(); ++i)
        append_tensor_record(blob, "adam.m." + named[i].first, ckpt.opt.m.at(i));
    for (size_t i = 0; i < named.size(); ++i)
        append_tensor_record(blob, "adam.v." + named[i].first, ckpt.opt.v.at(i));

    // write to a temp name then rename so a crash never leaves a half file
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    Reader r(ss.str(), path.string());

    if (r.take(4) != "DJSR") throw VersionError(path.string() + ": not a DJSR checkpoint");
    const uint32_t version = r.u32();
    if (version != 1)
        throw VersionError(path.string() + ": unsupported checkpoint version " +
                           std::to_string(version));
    const uint64_t header_len = r.u64();
    auto kv = parse_header(r.take(header_len), path.string());

    Checkpoint ckpt;
    ckpt.model.c_filters = std::stoi(require(kv, "model.c_filters", path.string()));
    ckpt.model.n_blocks = std::stoi(require(kv, "model.n_blocks", path.string()));
    ckpt.model.cfa_period = std::stoi(require(kv, "model.cfa_period", path.string()));
    ckpt.model.upscale = std::stoi(require(kv, "model.upscale", path.string()));
    ckpt.model.res_kernel = std::stoi(require(kv, "model.res_kernel", path.string()));
    ckpt.train.lr0 = std::stod(require(kv, "train.lr0", path.string()));
    ckpt.train.beta1 = std::stod(require(kv, "train.beta1", path.string()));
    ckpt.train.beta2 = std::stod(require(kv, "train.beta2", path.string()));
    ckpt.train.eps = std::stod(require(kv, "train.eps", path.string()));
    ckpt.train.batch = std::stoi(require(kv, "train.batch", path.string()));
    ckpt.train.halve_every = std::stoull(require(kv, "train.halve_every", path.string()));
    ckpt.train.max_steps = std::stoull(require(kv, "train.max_steps", path.string()));
    ckpt.train.seed = std::stoull(require(kv, "train.seed", path.string()));
    ckpt.train.dtype = require(kv, "train.dtype", path.string());
    ckpt.train.patch = std::stoi(require(kv, "train.patch", path.string()));
    ckpt.train.checkpoint_every =
        std::stoull(require(kv, "train.checkpoint_every", path.string()));
    ckpt.train.val_every = std::stoull(require(kv, "train.val_every", path.string()));
    ckpt.train.val_patches = std::stoi(require(kv, "train.val_patches", path.string()));
    ckpt.train.log_every = std::stoull(require(kv, "train.log_every", path.string()));
    ckpt.step = std::stoull(require(kv, "step", path.string()));
    ckpt.opt.t = std::stoull(require(kv, "opt.t", path.string()));
    ckpt.model.validate();
    ckpt.train.validate();

    // expected tensor layout from the config
    ckpt.params = build<float>(ckpt.model, 0);
    ckpt.opt.m.clear();
    ckpt.opt.v.clear();

    auto read_into = [&](const std::string& want_name, const Shape& want_shape) {
        const uint16_t name_len = r.u16();
        std::string name(r.take(name_len));
        if (name != want_name)
            throw CorruptFileError(path.string() + ": expected tensor " + want_name + ", found " +
                                   name);
        const int ndim = static_cast<unsigned char>(r.take(1)[0]);
        if (ndim != 4) throw CorruptFileError(path.string() + ": unsupported tensor rank");
        Shape s;
        s.n = static_cast<int64_t>(r.u64());
        s.c = static_cast<int64_t>(r.u64());
        s.h = static_cast<int64_t>(r.u64());
        s.w = static_cast<int64_t>(r.u64());
        if (!(s == want_shape))
            throw CorruptFileError(path.string() + ": tensor " + want_name + " has shape " +
                                   to_string(s) + ", expected " + to_string(want_shape));
        auto bytes = r.take(static_cast<size_t>(s.numel()) * sizeof(float));
        std::vector<float> data(static_cast<size_t>(s.numel()));
        std::memcpy(data.data(), bytes.data(), bytes.size());
        return Tensor::from_data(s, std::move(data));
    };

    for (auto& [name, t] : ckpt.params.named_tensors()) *t = read_into(name, t->shape());
    for (auto& [name, t] : ckpt.params.named_tensors())
        ckpt.opt.m.push_back(read_into("adam.m." + name, t->shape()));
    for (auto& [name, t] : ckpt.params.named_tensors())
        ckpt.opt.v.push_back(read_into("adam.v." + name, t->shape()));
    if (!r.exhausted()) throw CorruptFileError(path.string() + ": trailing bytes");
    return ckpt;
}

// ===== training loop =====

namespace {

struct Batch {
    Tensor input;   // (k,1,p,p)
    Tensor target;  // (k,3,rp,rp)
};

Batch assemble_batch(const std::vector<ImagePair>& corpus, const ModelConfig& mcfg,
                     const TrainConfig& tcfg, const CfaSpec& cfa, uint64_t step) {
    const int p = tcfg.patch;
    const int r = mcfg.upscale;
    const int k = tcfg.batch;
    Tensor input = Tensor::zeros({k, 1, p, p});
    Tensor target = Tensor::zeros({k, 3, static_cast<int64_t>(r) * p, static_cast<int64_t>(r) * p});
    auto iv = input.mutable_values();
    auto tv = target.mutable_values();
    const int64_t in_plane = static_cast<int64_t>(p) * p;
    const int64_t out_plane = static_cast<int64_t>(r) * p * r * p;
    for (int j = 0; j < k; ++j) {
        const uint64_t index = step * static_cast<uint64_t>(k) + static_cast<uint64_t>(j);
        PatchPair pair = patch_at_index(corpus, r, cfa, p, tcfg.seed, index);
        for (int64_t i = 0; i < in_plane; ++i)
            iv[j * in_plane + i] = static_cast<float>(pair.bayer.data[static_cast<size_t>(i)]);
        for (int64_t i = 0; i < 3 * out_plane; ++i)
            tv[j * 3 * out_plane + i] = static_cast<float>(pair.target.data[static_cast<size_t>(i)]);
    }
    return Batch{std::move(input), std::move(target)};
}

}  // namespace

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<ImagePair>& dataset, const fs::path& out_dir,
                  const Checkpoint* resume) {
    mcfg.validate();
    tcfg.validate();
    if (dataset.empty()) throw ArgumentError("train: empty dataset");
    fs::create_directories(out_dir);
    const CfaSpec cfa = CfaSpec::rggb();

    Checkpoint ckpt;
    if (resume) {
        ckpt = *resume;
        if (ckpt.model.c_filters != mcfg.c_filters || ckpt.model.n_blocks != mcfg.n_blocks ||
            ckpt.model.cfa_period != mcfg.cfa_period || ckpt.model.upscale != mcfg.upscale ||
            ckpt.model.res_kernel != mcfg.res_kernel)
            throw ConfigError("resume checkpoint model config mismatch");
    } else {
        ckpt.model = mcfg;
        ckpt.train = tcfg;
        ckpt.step = 0;
        ckpt.params = build<float>(mcfg, tcfg.seed);
        ckpt.opt = OptimState::zeros_like(ckpt.params);
    }
    ckpt.train = tcfg;
    ckpt.params.set_requires_grad(true);

    // last image is held out for validation monitoring when there is a choice
    std::vector<ImagePair> train_set(dataset.begin(),
                                     dataset.size() > 1 ? dataset.end() - 1 : dataset.end());
    const ImagePair& val_img = dataset.back();
    std::vector<PatchPair> val_patches =
        sample_patches(val_img.gt, val_img.bayer, mcfg.upscale, cfa, tcfg.patch,
                       tcfg.val_patches, mix_seed(tcfg.seed, 0x76616cull));

    TrainResult result;
    result.checkpoint_path = out_dir / "checkpoint.djsr";
    result.metrics_path = out_dir / "metrics.csv";
    const bool append = resume && ckpt.step > 0 && fs::exists(result.metrics_path);
    std::ofstream log(result.metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + result.metrics_path.string());
    if (!append) log << "step,lr,loss,val_psnr,val_ssim\n";

    auto validate_now = [&]() -> std::pair<double, double> {
        double psum = 0.0, ssum = 0.0;
        for (const PatchPair& vp : val_patches) {
            Tensor in = tensor_from_image(vp.bayer);
            Image out = image_from_tensor(forward(ckpt.params, mcfg, in));
            psum += psnr(out, vp.target);
            ssum += ssim(out, vp.target);
        }
        return {psum / val_patches.size(), ssum / val_patches.size()};
    };

    char row[256];
    uint64_t step = ckpt.step;
    for (; step < tcfg.max_steps; ++step) {
        const double lr = lr_at(step, tcfg);
        double loss_value = 0.0;
        try {
            Batch batch = assemble_batch(train_set, mcfg, tcfg, cfa, step);
            GradTape tape;
            Tensor pred = forward(ckpt.params, mcfg, batch.input, &tape);
            Tensor loss = mse_loss(pred, batch.target, &tape);
            loss_value = static_cast<double>(loss.scalar());
            GradMap grads = tape.backward(loss);
            adam_step(ckpt.params, grads, ckpt.opt, lr, tcfg);
        } catch (const NumericError& e) {
            ckpt.step = step;
            save_checkpoint(result.checkpoint_path, ckpt);
            throw TrainingAborted("non-finite value at step " + std::to_string(step) + ": " +
                                  e.what(), step);
        }
        const uint64_t done = step + 1;
        ckpt.step = done;

        const bool val_due = done % tcfg.val_every == 0 || done == tcfg.max_steps;
        const bool log_due = val_due || done % tcfg.log_every == 0 || step == 0;
        if (log_due) {
            if (val_due) {
                auto [vp, vs] = validate_now();
                std::snprintf(row, sizeof(row), "%llu,%.9g,%.9g,%.6f,%.6f\n",
                              static_cast<unsigned long long>(done), lr, loss_value, vp, vs);
            } else {
                std::snprintf(row, sizeof(row), "%llu,%.9g,%.9g,,\n",
                              static_cast<unsigned long long>(done), lr, loss_value);
            }
            log << row;
            log.flush();
        }
        if (done % tcfg.checkpoint_every == 0 && done != tcfg.max_steps)
            save_checkpoint(result.checkpoint_path, ckpt);
    }

    ckpt.step = step;
    save_checkpoint(result.checkpoint_path, ckpt);
    result.checkpoint = std::move(ckpt);
    return result;
}

// ===== explicit instantiations =====

template struct OptimStateT<float>;
template struct OptimStateT<double>;
template TensorT<float> mse_loss<float>(const TensorT<float>&, const TensorT<float>&,
                                        GradTapeT<float>*);
template TensorT<double> mse_loss<double>(const TensorT<double>&, const TensorT<double>&,
                                          GradTapeT<double>*);
template void adam_step<float>(ModelParamsT<float>&, const GradMapT<float>&, OptimStateT<float>&,
                               double, const TrainConfig&);
template void adam_step<double>(ModelParamsT<double>&, const GradMapT<double>&,
                                OptimStateT<double>&, double, const TrainConfig&);

}  // namespace djsr
