#include "djsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace djsr {

namespace {

void check_same_dims(const Image& a, const Image& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw DimensionError("metric operands differ in shape");
}

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2
constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2

const std::vector<double>& ssim_window() {
    static const std::vector<double> win = [] {
        std::vector<double> k(kWin);
        double total = 0.0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - (kWin - 1) / 2.0;
            k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            total += k[static_cast<size_t>(i)];
        }
        for (double& v : k) v /= total;
        return k;
    }();
    return win;
}

// Valid-region separable filter: horizontal then vertical passes.
std::vector<double> filter_valid(const std::vector<double>& plane, int64_t h, int64_t w) {
    const auto& win = ssim_window();
    const int64_t vw = w - kWin + 1, vh = h - kWin + 1;
    std::vector<double> horiz(static_cast<size_t>(h * vw));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += win[static_cast<size_t>(i)] * plane[y * w + x + i];
            horiz[static_cast<size_t>(y * vw + x)] = acc;
        }
    std::vector<double> out(static_cast<size_t>(vh * vw));
    for (int64_t y = 0; y < vh; ++y)
        for (int64_t x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i)
                acc += win[static_cast<size_t>(i)] * horiz[(y + i) * vw + x];
            out[static_cast<size_t>(y * vw + x)] = acc;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    check_same_dims(a, b);
    double sq = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double av = std::clamp(a.data[i], 0.0, 1.0);
        double bv = std::clamp(b.data[i], 0.0, 1.0);
        double d = av - bv;
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    check_same_dims(a, b);
    if (a.height < kWin || a.width < kWin)
        throw DimensionError("image smaller than the SSIM window");

    const int64_t h = a.height, w = a.width;
    const int64_t n = h * w;
    double channel_sum = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> pa(static_cast<size_t>(n)), pb(static_cast<size_t>(n));
        std::vector<double> paa(static_cast<size_t>(n)), pbb(static_cast<size_t>(n)),
            pab(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            double av = std::clamp(a.data[c * n + i], 0.0, 1.0);
            double bv = std::clamp(b.data[c * n + i], 0.0, 1.0);
            pa[static_cast<size_t>(i)] = av;
            pb[static_cast<size_t>(i)] = bv;
            paa[static_cast<size_t>(i)] = av * av;
            pbb[static_cast<size_t>(i)] = bv * bv;
            pab[static_cast<size_t>(i)] = av * bv;
        }
        std::vector<double> mu_a = filter_valid(pa, h, w);
        std::vector<double> mu_b = filter_valid(pb, h, w);
        std::vector<double> m_aa = filter_valid(paa, h, w);
        std::vector<double> m_bb = filter_valid(pbb, h, w);
        std::vector<double> m_ab = filter_valid(pab, h, w);

        double acc = 0.0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = m_aa[i] - ma * ma;
            const double vb = m_bb[i] - mb * mb;
            const double cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        }
        channel_sum += acc / static_cast<double>(mu_a.size());
    }
    return channel_sum / a.channels;
}

MetricReport evaluate(const ModelParams& params, const ModelConfig& config,
                      const std::vector<ImagePair>& pairs, int tile_lr) {
    return evaluate_with(
        [&](const Image& bayer) { return infer_image(params, config, bayer, tile_lr); }, pairs);
}

MetricReport evaluate_with(const std::function<Image(const Image&)>& sr,
                           const std::vector<ImagePair>& pairs) {
    if (pairs.empty()) throw ArgumentError("evaluate: empty dataset");
    MetricReport report;
    double psum = 0.0, ssum = 0.0;
    for (const ImagePair& pair : pairs) {
        Image out = sr(pair.bayer);
        MetricRow row;
        row.image = pair.name;
        row.psnr = psnr(out, pair.gt);
        row.ssim = ssim(out, pair.gt);
        psum += row.psnr;
        ssum += row.ssim;
        report.rows.push_back(std::move(row));
    }
    report.mean_psnr = psum / static_cast<double>(report.rows.size());
    report.mean_ssim = ssum / static_cast<double>(report.rows.size());
    return report;
}

void write_report_csv(std::ostream& out, const MetricReport& report,
                      const MetricReport* baseline) {
    char buf[256];
    if (baseline && baseline->rows.size() != report.rows.size())
        throw ContractError("baseline report size mismatch");
    out << (baseline ? "image,psnr_db,ssim,baseline_psnr_db,baseline_ssim\n"
                     : "image,psnr_db,ssim\n");
    auto emit = [&](const std::string& name, double p, double s, const double* bp,
                    const double* bs) {
        if (bp)
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", name.c_str(), p, s, *bp,
                          *bs);
        else
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", name.c_str(), p, s);
        out << buf;
    };
    for (size_t i = 0; i < report.rows.size(); ++i) {
        const MetricRow& row = report.rows[i];
        emit(row.image, row.psnr, row.ssim, baseline ? &baseline->rows[i].psnr : nullptr,
             baseline ? &baseline->rows[i].ssim : nullptr);
    }
    emit("mean", report.mean_psnr, report.mean_ssim, baseline ? &baseline->mean_psnr : nullptr,
         baseline ? &baseline->mean_ssim : nullptr);
}

}  // namespace djsr
