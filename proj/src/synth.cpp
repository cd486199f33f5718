#include "benet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "benet/common.hpp"

namespace benet::synth {

namespace {

using png_io::Image8;
using json = nlohmann::json;

constexpr uint64_t kRealTag = 0x5EA1ULL;
constexpr uint64_t kBaseTag = 0xFAB0ULL;
constexpr uint64_t kDonorTag = 0xD01FULL;
constexpr uint64_t kTamperTag = 0x7A39ULL;

// Channel anchors of the real class; their mean is the analytic target the
// Monte-Carlo oracle checks against.
constexpr double kAnchors[3] = {0.55, 0.45, 0.50};
constexpr double kBaseJitter = 0.05;
// The fixed texture is the stable signature of the real class: identical in
// every real image, so a reconstruction model can memorize it, while any
// local tamper shifts its phase. Integer cycle counts keep the field
// exactly zero-mean over the pixel grid.
constexpr double kTexAmp = 0.08;
constexpr double kTexCyclesX[2] = {4.0, 0.0};
constexpr double kTexCyclesY[2] = {0.0, 4.0};
constexpr double kTexPhase[3] = {0.7, 2.1, 4.0};
constexpr double kTexPhaseY[3] = {1.3, 3.4, 0.2};

uint64_t family_tag(Family f) { return 0x100ULL + static_cast<uint64_t>(f); }
uint64_t split_tag(Split s) { return 0x200ULL + static_cast<uint64_t>(s); }

uint8_t quantize(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

// Smooth "real face" proxy: per-channel base color near a fixed anchor, a
// center-jittered radial field (recentred to exact zero spatial mean), two
// smooth nuisance blobs with symmetric amplitude, and a fixed low-frequency
// texture whose integer frequencies sum to zero over the grid. Clipping is
// rare and the blob amplitudes are symmetric, so the population pixel mean
// stays at the anchor mean.
Image8 render_real(int size, Rng& rng) {
    const int s = size;
    double base[3];
    for (int c = 0; c < 3; ++c)
        base[c] = kAnchors[c] + rng.uniform(-kBaseJitter, kBaseJitter);
    const double cx = s * (0.5 + rng.uniform(-0.03, 0.03));
    const double cy = s * (0.5 + rng.uniform(-0.03, 0.03));
    const double amp = 0.06 + rng.uniform(-0.01, 0.01);
    const double rmax = 0.75 * s;

    struct Blob {
        double cx, cy, sigma, amp;
    };
    Blob blobs[2];
    for (Blob& b : blobs) {
        b.cx = rng.uniform(0.0, static_cast<double>(s));
        b.cy = rng.uniform(0.0, static_cast<double>(s));
        b.sigma = rng.uniform(0.10, 0.20) * s;
        const double a = rng.uniform(0.04, 0.10);
        b.amp = rng.coin() ? a : -a;
    }

    std::vector<double> radial(static_cast<size_t>(s) * s);
    double mean = 0.0;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double r = std::hypot(x - cx, y - cy);
            const double w = std::min(r / rmax, 1.0);
            double v = amp * std::cos(M_PI * w);
            for (const Blob& b : blobs) {
                const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                v += b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
            }
            radial[static_cast<size_t>(y) * s + x] = v;
            mean += v;
        }
    mean /= static_cast<double>(s) * s;

    Image8 img;
    img.width = img.height = s;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(s) * s * 3);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double rad = radial[static_cast<size_t>(y) * s + x] - mean;
            for (int c = 0; c < 3; ++c) {
                const double tex =
                    kTexAmp * std::sin(2.0 * M_PI * (kTexCyclesX[0] * x + kTexCyclesY[0] * y) / s +
                                       kTexPhase[c]) +
                    kTexAmp * std::sin(2.0 * M_PI * (kTexCyclesX[1] * x + kTexCyclesY[1] * y) / s +
                                       kTexPhaseY[c]);
                img.pixels[img.idx(y, x, c)] = quantize(base[c] + rad + tex);
            }
        }
    return img;
}

struct Rect {
    int x0, y0, w, h;
};

// Contiguous tamper region with area fraction inside [lo, hi].
Rect sample_mask_rect(int size, double lo, double hi, Rng& rng) {
    const double side_lo = std::sqrt(lo), side_hi = std::sqrt(hi);
    auto side = [&](double f) {
        return std::max<int>(1, std::min<int>(size, static_cast<int>(std::lround(f * size))));
    };
    int w = side(rng.uniform(side_lo, side_hi));
    int h = side(rng.uniform(side_lo, side_hi));
    const double area = static_cast<double>(size) * size;
    // Integer rounding can push the area fraction slightly outside the
    // range; nudge deterministically until it fits.
    int guard = 0;
    while (w * h > hi * area && guard++ < 4 * size) (w >= h ? w : h)--;
    while (w * h < lo * area && guard++ < 4 * size) (w <= h && w < size ? w : h)++;
    w = std::max(1, std::min(size, w));
    h = std::max(1, std::min(size, h));
    Rect r;
    r.w = w;
    r.h = h;
    r.x0 = static_cast<int>(rng.below(size - w + 1));
    r.y0 = static_cast<int>(rng.below(size - h + 1));
    return r;
}

double sample_bilinear(const Image8& img, double y, double x, int c) {
    const int h = img.height, w = img.width;
    x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0, fy = y - y0;
    auto at = [&](int yy, int xx) { return img.pixels[img.idx(yy, xx, c)] / 255.0; };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
           fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

// Tamper transforms write only inside the mask; outside pixels keep the
// base bytes untouched.
void apply_splice(Image8& img, const Image8& donor, const Rect& r, Rng& rng, double strength) {
    const double blend = strength * rng.uniform(0.85, 1.0);
    const int dx0 = static_cast<int>(rng.below(img.width - r.w + 1));
    const int dy0 = static_cast<int>(rng.below(img.height - r.h + 1));
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double b = img.pixels[img.idx(r.y0 + y, r.x0 + x, c)] / 255.0;
                const double d = donor.pixels[donor.idx(dy0 + y, dx0 + x, c)] / 255.0;
                img.pixels[img.idx(r.y0 + y, r.x0 + x, c)] =
                    quantize((1.0 - blend) * b + blend * d);
            }
}

void apply_warp(Image8& img, const Image8& base, const Rect& r, Rng& rng, double strength) {
    const double amp = strength * rng.uniform(2.5, 6.0);
    const double wl1 = rng.uniform(5.0, 12.0);
    const double wl2 = rng.uniform(5.0, 12.0);
    const double ph1 = rng.uniform(0.0, 2.0 * M_PI);
    const double ph2 = rng.uniform(0.0, 2.0 * M_PI);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) {
            const int yy = r.y0 + y, xx = r.x0 + x;
            const double dx = amp * std::sin(2.0 * M_PI * yy / wl1 + ph1);
            const double dy = amp * std::sin(2.0 * M_PI * xx / wl2 + ph2);
            for (int c = 0; c < 3; ++c)
                img.pixels[img.idx(yy, xx, c)] =
                    quantize(sample_bilinear(base, yy + dy, xx + dx, c));
        }
}

void apply_colorshift(Image8& img, const Rect& r, Rng& rng, double strength) {
    double gain[3], offset[3];
    for (int c = 0; c < 3; ++c) {
        // Bounded away from the identity so the shift survives quantization.
        const double g = strength * rng.uniform(0.15, 0.30);
        gain[c] = rng.coin() ? 1.0 + g : 1.0 - g;
        const double o = strength * rng.uniform(0.04, 0.10);
        offset[c] = rng.coin() ? o : -o;
    }
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = img.pixels[img.idx(r.y0 + y, r.x0 + x, c)] / 255.0;
                img.pixels[img.idx(r.y0 + y, r.x0 + x, c)] = quantize(gain[c] * v + offset[c]);
            }
}

void apply_texture(Image8& img, const Rect& r, Rng& rng, double strength) {
    // Band-limited noise: a few low-frequency sinusoids per channel.
    const int waves = 4;
    const double total_amp = strength * rng.uniform(0.20, 0.30);
    struct Wave {
        double fx, fy, ph, amp;
    };
    std::vector<Wave> w(waves * 3);
    for (auto& wv : w) {
        wv.fx = rng.uniform(3.0, 8.0);
        wv.fy = rng.uniform(3.0, 8.0);
        wv.ph = rng.uniform(0.0, 2.0 * M_PI);
        wv.amp = total_amp / waves;
    }
    const int s = img.width;
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int yy = r.y0 + y, xx = r.x0 + x;
                double n = 0.0;
                for (int k = 0; k < waves; ++k) {
                    const Wave& wv = w[static_cast<size_t>(c * waves + k)];
                    n += wv.amp *
                         std::sin(2.0 * M_PI * (wv.fx * xx + wv.fy * yy) / s + wv.ph);
                }
                const double v = img.pixels[img.idx(yy, xx, c)] / 255.0;
                img.pixels[img.idx(yy, xx, c)] = quantize(v + n);
            }
}

json spec_to_json(const SyntheticSpec& spec) {
    json j;
    j["image_size"] = spec.image_size;
    j["n_train"] = spec.n_train;
    j["n_val"] = spec.n_val;
    j["n_test"] = spec.n_test;
    std::vector<std::string> fams;
    for (Family f : spec.families) fams.push_back(family_name(f));
    j["families"] = fams;
    j["seed"] = spec.seed;
    j["tamper_area_frac"] = {spec.tamper_area_lo, spec.tamper_area_hi};
    return j;
}

SyntheticSpec spec_from_json(const json& j) {
    SyntheticSpec spec;
    spec.image_size = j.at("image_size").get<int>();
    spec.n_train = j.at("n_train").get<int>();
    spec.n_val = j.at("n_val").get<int>();
    spec.n_test = j.at("n_test").get<int>();
    spec.families.clear();
    for (const auto& f : j.at("families")) spec.families.push_back(family_from_name(f));
    spec.seed = j.at("seed").get<uint64_t>();
    spec.tamper_area_lo = j.at("tamper_area_frac").at(0).get<double>();
    spec.tamper_area_hi = j.at("tamper_area_frac").at(1).get<double>();
    return spec;
}

}  // namespace

std::string family_name(Family f) {
    switch (f) {
        case Family::splice: return "splice";
        case Family::warp: return "warp";
        case Family::colorshift: return "colorshift";
        case Family::texture: return "texture";
    }
    throw InvariantError("unknown family enum");
}

Family family_from_name(const std::string& name) {
    for (Family f : all_families())
        if (family_name(f) == name) return f;
    throw ConfigError("unknown manipulation family: " + name);
}

const std::vector<Family>& all_families() {
    static const std::vector<Family> fams = {Family::splice, Family::warp, Family::colorshift,
                                             Family::texture};
    return fams;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw InvariantError("unknown split enum");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split: " + name);
}

int SyntheticSpec::count_for(Split s) const {
    switch (s) {
        case Split::train: return n_train;
        case Split::val: return n_val;
        case Split::test: return n_test;
    }
    throw InvariantError("unknown split enum");
}

void SyntheticSpec::validate() const {
    if (image_size < 8) throw ConfigError("synthetic spec: image_size must be >= 8");
    if (n_train < 0 || n_val < 0 || n_test < 0)
        throw ConfigError("synthetic spec: negative sample count");
    if (n_train + n_val + n_test == 0)
        throw ConfigError("synthetic spec: no samples requested");
    if (families.empty()) throw ConfigError("synthetic spec: at least one family required");
    if (!(tamper_area_lo > 0.0 && tamper_area_lo <= tamper_area_hi && tamper_area_hi <= 1.0))
        throw ConfigError("synthetic spec: tamper_area_frac range invalid");
}

double analytic_real_mean() { return (kAnchors[0] + kAnchors[1] + kAnchors[2]) / 3.0; }

Sample gen_real(const SyntheticSpec& spec, Split split, int index) {
    Rng rng(mix_seed({spec.seed, split_tag(split), kRealTag, static_cast<uint64_t>(index)}));
    Image8 img = render_real(spec.image_size, rng);
    Sample s;
    s.image = image_to_tensor(img);
    s.label = 0;
    s.family = "none";
    s.index = index;
    return s;
}

png_io::Image8 tamper_base(const SyntheticSpec& spec, Split split, int index) {
    Rng rng(mix_seed({spec.seed, split_tag(split), kBaseTag, static_cast<uint64_t>(index)}));
    return render_real(spec.image_size, rng);
}

Sample gen_fake(const SyntheticSpec& spec, Family family, Split split, int index) {
    if (std::find(spec.families.begin(), spec.families.end(), family) == spec.families.end())
        throw ConfigError("gen_fake: family " + family_name(family) + " not in spec");
    Image8 img = tamper_base(spec, split, index);
    Rng rng(mix_seed({spec.seed, split_tag(split), family_tag(family),
                      static_cast<uint64_t>(index), kTamperTag}));
    const Rect r = sample_mask_rect(spec.image_size, spec.tamper_area_lo, spec.tamper_area_hi, rng);
    // One fake in five is rendered at reduced strength. Subtle tampers sit
    // above the reconstruction residual of a bias-trained model but below
    // the bias noise floor of a purely discriminative one.
    const double strength = rng.uniform() < 0.2 ? rng.uniform(0.35, 0.6) : 1.0;
    switch (family) {
        case Family::splice: {
            Rng donor_rng(mix_seed({spec.seed, split_tag(split), kDonorTag,
                                    static_cast<uint64_t>(index)}));
            Image8 donor = render_real(spec.image_size, donor_rng);
            apply_splice(img, donor, r, rng, strength);
            break;
        }
        case Family::warp: {
            Image8 base = img;  // sample from the untouched base
            apply_warp(img, base, r, rng, strength);
            break;
        }
        case Family::colorshift:
            apply_colorshift(img, r, rng, strength);
            break;
        case Family::texture:
            apply_texture(img, r, rng, strength);
            break;
    }
    Sample s;
    s.image = image_to_tensor(img);
    s.label = 1;
    s.family = family_name(family);
    s.index = index;
    s.mask.assign(static_cast<size_t>(spec.image_size) * spec.image_size, 0);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
            s.mask[static_cast<size_t>(r.y0 + y) * spec.image_size + (r.x0 + x)] = 255;
    return s;
}

const std::vector<Sample>& Dataset::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::val: return val;
        case Split::test: return test;
    }
    throw InvariantError("unknown split enum");
}

Dataset generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    for (Split sp : {Split::train, Split::val, Split::test}) {
        std::vector<Sample>& out = sp == Split::train ? ds.train
                                   : sp == Split::val ? ds.val
                                                      : ds.test;
        const int n = spec.count_for(sp);
        for (int i = 0; i < n; ++i) out.push_back(gen_real(spec, sp, i));
        for (Family f : spec.families)
            for (int i = 0; i < n; ++i) out.push_back(gen_fake(spec, f, sp, i));
    }
    return ds;
}

namespace {

std::string image_rel_path(Split sp, const std::string& tag, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%04d.png", index);
    return split_name(sp) + "/images/" + tag + buf;
}

std::string mask_rel_path(Split sp, const std::string& tag, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%04d.png", index);
    return split_name(sp) + "/masks/" + tag + buf;
}

}  // namespace

void write_dataset(const SyntheticSpec& spec, const std::filesystem::path& root) {
    spec.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw DataError("cannot create dataset root: " + root.string());
    {
        std::ofstream f(root / "spec.json");
        if (!f) throw DataError("cannot write " + (root / "spec.json").string());
        f << spec_to_json(spec).dump(2) << "\n";
    }
    for (Split sp : {Split::train, Split::val, Split::test}) {
        const fs::path sdir = root / split_name(sp);
        fs::create_directories(sdir / "images");
        fs::create_directories(sdir / "masks");
        std::ofstream csv(sdir / "labels.csv");
        if (!csv) throw DataError("cannot write " + (sdir / "labels.csv").string());
        csv << "path,label,family,index\n";
        const int n = spec.count_for(sp);
        for (int i = 0; i < n; ++i) {
            Sample s = gen_real(spec, sp, i);
            const std::string rel = image_rel_path(sp, "real", i);
            png_io::write_png(root / rel, tensor_to_image(s.image));
            csv << rel << ",0,none," << i << "\n";
        }
        for (Family f : spec.families) {
            for (int i = 0; i < n; ++i) {
                Sample s = gen_fake(spec, f, sp, i);
                const std::string rel = image_rel_path(sp, family_name(f), i);
                png_io::write_png(root / rel, tensor_to_image(s.image));
                png_io::Image8 m;
                m.width = m.height = spec.image_size;
                m.channels = 1;
                m.pixels = s.mask;
                png_io::write_png(root / mask_rel_path(sp, family_name(f), i), m);
                csv << rel << ",1," << family_name(f) << "," << i << "\n";
            }
        }
    }
}

Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const fs::path spec_path = root / "spec.json";
    std::ifstream sf(spec_path);
    if (!sf) throw DataError("missing dataset spec: " + spec_path.string());
    json j;
    try {
        sf >> j;
    } catch (const json::exception& e) {
        throw DataError("corrupt dataset spec " + spec_path.string() + ": " + e.what());
    }
    Dataset ds;
    ds.spec = spec_from_json(j);

    for (Split sp : {Split::train, Split::val, Split::test}) {
        std::vector<Sample>& out = sp == Split::train ? ds.train
                                   : sp == Split::val ? ds.val
                                                      : ds.test;
        const fs::path csv_path = root / split_name(sp) / "labels.csv";
        std::ifstream csv(csv_path);
        if (!csv) throw DataError("missing labels file: " + csv_path.string());
        std::string line;
        std::getline(csv, line);  // header
        if (line != "path,label,family,index")
            throw DataError("bad labels header in " + csv_path.string());
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string path, label_s, family, index_s;
            if (!std::getline(ls, path, ',') || !std::getline(ls, label_s, ',') ||
                !std::getline(ls, family, ',') || !std::getline(ls, index_s))
                throw DataError("bad labels row in " + csv_path.string() + ": " + line);
            Sample s;
            s.label = std::stoi(label_s);
            s.family = family;
            s.index = std::stoi(index_s);
            if ((s.label == 0) != (family == "none"))
                throw DataError("label/family mismatch in " + csv_path.string() + ": " + line);
            const fs::path img_path = root / path;
            if (!fs::exists(img_path))
                throw DataError("missing image file: " + img_path.string());
            png_io::Image8 img = png_io::read_png(img_path);
            if (img.width != ds.spec.image_size || img.height != ds.spec.image_size ||
                img.channels != 3)
                throw DataError("image geometry mismatch: " + img_path.string());
            s.image = image_to_tensor(img);
            if (s.label == 1) {
                const fs::path mask_path = root / mask_rel_path(sp, family, s.index);
                if (!fs::exists(mask_path))
                    throw DataError("missing mask file: " + mask_path.string());
                png_io::Image8 m = png_io::read_png(mask_path);
                s.mask = m.pixels;
            }
            out.push_back(std::move(s));
        }
    }
    return ds;
}

Tensor image_to_tensor(const png_io::Image8& img) {
    Tensor t({3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at3(c, y, x) = img.pixels[img.idx(y, x, c % img.channels)] / 255.0;
    return t;
}

png_io::Image8 tensor_to_image(const Tensor& t) {
    png_io::Image8 img;
    img.channels = static_cast<int>(t.dim(0));
    img.height = static_cast<int>(t.dim(1));
    img.width = static_cast<int>(t.dim(2));
    img.pixels.resize(static_cast<size_t>(img.channels) * img.height * img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.pixels[img.idx(y, x, c)] = quantize(t.at3(c, y, x));
    return img;
}

Tensor hflip(const Tensor& image) {
    const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out({c, h, w});
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                out.at3(ci, y, x) = image.at3(ci, y, w - 1 - x);
    return out;
}

Tensor augment(const Tensor& image, Rng& rng) {
    Tensor out = image;
    if (rng.uniform() < 0.5) out = hflip(out);
    if (rng.uniform() < 0.5) {
        const int64_t h = out.dim(1), w = out.dim(2);
        // Erased rectangle covers 2-10% of the area.
        const double side_lo = std::sqrt(0.02), side_hi = std::sqrt(0.10);
        int ew = std::max<int>(1, static_cast<int>(std::lround(rng.uniform(side_lo, side_hi) * w)));
        int eh = std::max<int>(1, static_cast<int>(std::lround(rng.uniform(side_lo, side_hi) * h)));
        ew = std::min<int>(ew, static_cast<int>(w));
        eh = std::min<int>(eh, static_cast<int>(h));
        const int64_t x0 = rng.below(w - ew + 1);
        const int64_t y0 = rng.below(h - eh + 1);
        for (int64_t c = 0; c < out.dim(0); ++c)
            for (int64_t y = y0; y < y0 + eh; ++y)
                for (int64_t x = x0; x < x0 + ew; ++x) out.at3(c, y, x) = 0.5;
    }
    return out;
}

}  // namespace benet::synth
