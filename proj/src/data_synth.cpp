#include "iuf/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "iuf/common.hpp"
#include "iuf/image_io.hpp"
#include "iuf/rng.hpp"

namespace iuf {

namespace {

constexpr double kMinDefectFrac = 0.002;
constexpr double kMaxDefectFrac = 0.10;

std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
    std::uint64_t s = seed ^ (v * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL);
    return splitmix64(s);
}

struct Palette {
    double c0[3];
    double c1[3];
};

Palette palette_from_seed(std::uint64_t palette_seed) {
    Rng rng(palette_seed);
    Palette p{};
    for (int c = 0; c < 3; ++c) p.c0[c] = rng.uniform(0.15, 0.55);
    for (int c = 0; c < 3; ++c) p.c1[c] = rng.uniform(0.55, 0.9);
    return p;
}

void put_mix(Image& img, int y, int x, const Palette& p, double t) {
    t = std::clamp(t, 0.0, 1.0);
    for (int c = 0; c < 3; ++c) img.at(c, y, x) = p.c0[c] * (1.0 - t) + p.c1[c] * t;
}

// Object-fixed value-noise lattice, bilinearly interpolated.
struct NoiseGrid {
    int n;
    std::vector<double> v;

    NoiseGrid(int n_, Rng& rng) : n(n_), v(static_cast<size_t>(n_) * n_) {
        for (auto& x : v) x = rng.uniform();
    }

    double sample(double fy, double fx) const {
        double gy = fy * (n - 1), gx = fx * (n - 1);
        int y0 = std::min(static_cast<int>(gy), n - 2);
        int x0 = std::min(static_cast<int>(gx), n - 2);
        double wy = gy - y0, wx = gx - x0;
        double a = v[y0 * n + x0], b = v[y0 * n + x0 + 1];
        double c = v[(y0 + 1) * n + x0], d = v[(y0 + 1) * n + x0 + 1];
        return (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy;
    }
};

}  // namespace

GeneratorKind generator_kind_from_string(const std::string& name) {
    if (name == "stripes") return GeneratorKind::stripes;
    if (name == "checker") return GeneratorKind::checker;
    if (name == "blobs") return GeneratorKind::blobs;
    if (name == "gradient") return GeneratorKind::gradient;
    if (name == "rings") return GeneratorKind::rings;
    if (name == "noise_texture") return GeneratorKind::noise_texture;
    throw ConfigError("unknown generator_kind: " + name);
}

const char* to_string(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::stripes: return "stripes";
        case GeneratorKind::checker: return "checker";
        case GeneratorKind::blobs: return "blobs";
        case GeneratorKind::gradient: return "gradient";
        case GeneratorKind::rings: return "rings";
        case GeneratorKind::noise_texture: return "noise_texture";
    }
    throw ConfigError("unknown generator_kind enum value");
}

ObjectSpec default_object_spec(int object_id, std::uint64_t data_seed, int image_size) {
    ObjectSpec spec;
    spec.object_id = object_id;
    spec.kind = static_cast<GeneratorKind>(object_id % 6);
    spec.image_size = image_size;
    std::uint64_t obj_seed = derive_seed(data_seed, "object" + std::to_string(object_id));
    Rng rng(obj_seed);
    double frequency = rng.uniform(2.5, 6.0);
    double orientation = rng.uniform(0.0, M_PI);
    // one palette per run: objects share color statistics, so incremental
    // training on a new object contends for the same feature channels
    double palette_seed = static_cast<double>(derive_seed(data_seed, "palette") >> 16);
    spec.texture_params = {frequency, orientation, palette_seed};
    spec.seed = derive_seed(obj_seed, "images");
    return spec;
}

Image render_object_image(const ObjectSpec& spec, std::uint64_t image_index) {
    const int s = spec.image_size;
    if (s <= 0) throw ConfigError("image_size must be positive");
    if (spec.texture_params.size() < 3) throw ConfigError("texture_params needs 3 entries");
    const double freq = spec.texture_params[0];
    const double theta = spec.texture_params[1];
    const auto palette_seed = static_cast<std::uint64_t>(spec.texture_params[2]);
    Palette pal = palette_from_seed(palette_seed);

    Rng obj_rng(hash_combine(spec.seed, 0xa5a5a5a5ULL));      // object-fixed structure
    Rng img_rng(hash_combine(spec.seed, image_index + 1));    // per-image jitter

    Image img(3, s, s);
    const double ct = std::cos(theta), st = std::sin(theta);

    switch (spec.kind) {
        case GeneratorKind::stripes: {
            double phase = img_rng.uniform(0.0, 2.0 * M_PI);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    double u = (x * ct + y * st) / s;
                    double v = 0.5 + 0.5 * std::sin(2.0 * M_PI * freq * u + phase);
                    put_mix(img, y, x, pal, v);
                }
            break;
        }
        case GeneratorKind::checker: {
            double cell = s / (2.0 * freq);
            double ox = img_rng.uniform(0.0, cell), oy = img_rng.uniform(0.0, cell);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    long cx = static_cast<long>(std::floor((x + ox) / cell));
                    long cy = static_cast<long>(std::floor((y + oy) / cell));
                    double v = ((cx + cy) & 1) ? 0.85 : 0.15;
                    put_mix(img, y, x, pal, v);
                }
            break;
        }
        case GeneratorKind::blobs: {
            const int k = 6;
            double cx[k], cy[k], sigma[k];
            for (int i = 0; i < k; ++i) {
                cx[i] = obj_rng.uniform(0.1, 0.9) * s;
                cy[i] = obj_rng.uniform(0.1, 0.9) * s;
                sigma[i] = obj_rng.uniform(0.08, 0.16) * s;
            }
            double jx = img_rng.uniform(-2.0, 2.0), jy = img_rng.uniform(-2.0, 2.0);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    double acc = 0.0;
                    for (int i = 0; i < k; ++i) {
                        double dx = x - cx[i] - jx, dy = y - cy[i] - jy;
                        acc += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma[i] * sigma[i]));
                    }
                    put_mix(img, y, x, pal, acc / (acc + 0.6));
                }
            break;
        }
        case GeneratorKind::gradient: {
            double jitter = img_rng.uniform(-0.06, 0.06);
            double ct2 = std::cos(theta + jitter), st2 = std::sin(theta + jitter);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    double u = ((x - s / 2.0) * ct2 + (y - s / 2.0) * st2) / s + 0.5;
                    put_mix(img, y, x, pal, u);
                }
            break;
        }
        case GeneratorKind::rings: {
            double ccx = s * obj_rng.uniform(0.35, 0.65), ccy = s * obj_rng.uniform(0.35, 0.65);
            double jx = img_rng.uniform(-1.5, 1.5), jy = img_rng.uniform(-1.5, 1.5);
            double phase = img_rng.uniform(0.0, 2.0 * M_PI);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    double r = std::hypot(x - ccx - jx, y - ccy - jy) / s;
                    double v = 0.5 + 0.5 * std::sin(2.0 * M_PI * freq * r + phase);
                    put_mix(img, y, x, pal, v);
                }
            break;
        }
        case GeneratorKind::noise_texture: {
            NoiseGrid base(9, obj_rng);
            NoiseGrid detail(17, obj_rng);
            NoiseGrid wobble(5, img_rng);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    double fy = y / (s - 1.0), fx = x / (s - 1.0);
                    double v = 0.65 * base.sample(fy, fx) + 0.25 * detail.sample(fy, fx) +
                               0.10 * wobble.sample(fy, fx);
                    put_mix(img, y, x, pal, v);
                }
            break;
        }
    }
    return img;
}

namespace {

void stamp_block(Mask& mask, int y, int x, int w) {
    int r0 = (w - 1) / 2;
    int r1 = w / 2;
    for (int dy = -r0; dy <= r1; ++dy)
        for (int dx = -r0; dx <= r1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < mask.height && xx >= 0 && xx < mask.width) mask.at(yy, xx) = 1;
        }
}

void draw_segment(Mask& mask, int y0, int x0, int y1, int x1, int w) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        stamp_block(mask, y0, x0, w);
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

Mask make_defect_mask(int h, int w, Rng& rng, DefectKind kind) {
    Mask mask(h, w);
    const auto min_area = static_cast<size_t>(std::ceil(kMinDefectFrac * h * w));
    switch (kind) {
        case DefectKind::scratch: {
            int width = rng.uniform_int(1, 3);
            int margin = std::max(4, h / 10);
            double y = rng.uniform_int(margin, h - 1 - margin);
            double x = rng.uniform_int(margin, w - 1 - margin);
            double angle = rng.uniform(0.0, 2.0 * M_PI);
            int segments = rng.uniform_int(3, 6);
            for (int i = 0; i < segments; ++i) {
                double len = rng.uniform(4.0, 8.0);
                double ny = y + len * std::sin(angle);
                double nx = x + len * std::cos(angle);
                // reflect off borders so the polyline stays inside
                if (ny < 1 || ny > h - 2) angle = -angle, ny = std::clamp(ny, 1.0, h - 2.0);
                if (nx < 1 || nx > w - 2) angle = M_PI - angle, nx = std::clamp(nx, 1.0, w - 2.0);
                draw_segment(mask, static_cast<int>(y), static_cast<int>(x), static_cast<int>(ny),
                             static_cast<int>(nx), width);
                y = ny;
                x = nx;
                angle += rng.uniform(-0.5, 0.5);
            }
            if (mask.area() < min_area) stamp_block(mask, static_cast<int>(y), static_cast<int>(x), 3);
            break;
        }
        case DefectKind::blotch: {
            double rx = rng.uniform(3.0, 0.11 * w);
            double ry = rng.uniform(3.0, 0.11 * h);
            double rot = rng.uniform(0.0, M_PI);
            int cx = rng.uniform_int(static_cast<int>(rx) + 1, w - 2 - static_cast<int>(rx));
            int cy = rng.uniform_int(static_cast<int>(ry) + 1, h - 2 - static_cast<int>(ry));
            double cr = std::cos(rot), sr = std::sin(rot);
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    double dx = xx - cx, dy = yy - cy;
                    double u = (dx * cr + dy * sr) / rx;
                    double v = (-dx * sr + dy * cr) / ry;
                    if (u * u + v * v <= 1.0) mask.at(yy, xx) = 1;
                }
            break;
        }
        case DefectKind::noise_patch: {
            int side_y = rng.uniform_int(6, std::max(6, h / 4));
            int side_x = rng.uniform_int(6, std::max(6, w / 4));
            int y0 = rng.uniform_int(1, h - 1 - side_y);
            int x0 = rng.uniform_int(1, w - 1 - side_x);
            for (int yy = y0; yy < y0 + side_y; ++yy)
                for (int xx = x0; xx < x0 + side_x; ++xx) mask.at(yy, xx) = 1;
            break;
        }
    }
    return mask;
}

}  // namespace

std::pair<Image, Mask> inject_defect(const Image& image, std::uint64_t rng_seed, DefectKind kind) {
    Rng rng(hash_combine(rng_seed, 0xdefec7ULL));
    Mask mask = make_defect_mask(image.height, image.width, rng, kind);

    const auto max_area = static_cast<size_t>(kMaxDefectFrac * image.height * image.width);
    if (mask.area() > max_area) {
        // crop the mask back to budget from the bottom rows
        size_t excess = mask.area() - max_area;
        for (int y = image.height - 1; y >= 0 && excess > 0; --y)
            for (int x = image.width - 1; x >= 0 && excess > 0; --x)
                if (mask.at(y, x)) {
                    mask.at(y, x) = 0;
                    --excess;
                }
    }

    Image out = image;
    double delta[3];
    for (double& d : delta) d = rng.uniform(0.12, 0.3) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const bool per_pixel_noise = (kind == DefectKind::noise_patch);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < image.channels; ++c) {
                double v = image.at(c, y, x);
                double nv;
                if (per_pixel_noise) {
                    nv = v + (rng.uniform() - v) * 0.5;
                } else {
                    nv = std::clamp(v + delta[c % 3], 0.0, 1.0);
                }
                if (std::abs(nv - v) < 0.04) {
                    nv = v > 0.5 ? v - 0.15 : v + 0.15;
                }
                out.at(c, y, x) = std::clamp(nv, 0.0, 1.0);
            }
        }
    return {std::move(out), std::move(mask)};
}

ObjectDataset generate_dataset(const ObjectSpec& spec, int n_train, int n_test_normal,
                               int n_test_defective) {
    if (n_train < 1 || n_test_normal < 1 || n_test_defective < 1)
        throw ConfigError("generate_dataset counts must be >= 1");
    ObjectDataset ds;
    std::uint64_t idx = 0;
    for (int i = 0; i < n_train; ++i) {
        Sample s;
        s.image = render_object_image(spec, idx++);
        s.object_id = spec.object_id;
        s.label = Label::normal;
        s.mask = Mask(s.image.height, s.image.width);
        ds.train.push_back(std::move(s));
    }
    for (int i = 0; i < n_test_normal; ++i) {
        Sample s;
        s.image = render_object_image(spec, idx++);
        s.object_id = spec.object_id;
        s.label = Label::normal;
        s.mask = Mask(s.image.height, s.image.width);
        ds.test.push_back(std::move(s));
    }
    for (int i = 0; i < n_test_defective; ++i) {
        Image base = render_object_image(spec, idx++);
        auto kind = static_cast<DefectKind>(i % 3);
        auto [img, mask] = inject_defect(base, hash_combine(spec.seed, 0xbadULL + i), kind);
        Sample s;
        s.image = std::move(img);
        s.object_id = spec.object_id;
        s.label = Label::defective;
        s.mask = std::move(mask);
        ds.test.push_back(std::move(s));
    }
    return ds;
}

namespace {

bool is_image_file(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ".png" || e == ".ppm" || e == ".pgm";
}

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

MvtecDataset load_mvtec_layout(const std::filesystem::path& root, int image_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw ConfigError("mvtec root is not a directory: " + root.string());

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ConfigError("mvtec root has no object directories: " + root.string());

    MvtecDataset ds;
    for (size_t id = 0; id < names.size(); ++id) {
        const fs::path obj_dir = root / names[id];
        ObjectDataset obj;

        auto train_files = sorted_files(obj_dir / "train" / "good");
        if (train_files.empty())
            throw ConfigError("empty object directory (no train/good images): " + obj_dir.string());
        for (const auto& f : train_files) {
            Sample s;
            s.image = resize_bilinear(read_image(f), image_size, image_size);
            s.object_id = static_cast<int>(id);
            s.label = Label::normal;
            s.mask = Mask(image_size, image_size);
            obj.train.push_back(std::move(s));
        }

        const fs::path test_dir = obj_dir / "test";
        if (fs::is_directory(test_dir)) {
            std::vector<std::string> types;
            for (const auto& e : fs::directory_iterator(test_dir))
                if (e.is_directory()) types.push_back(e.path().filename().string());
            std::sort(types.begin(), types.end());
            for (const auto& type : types) {
                for (const auto& f : sorted_files(test_dir / type)) {
                    Sample s;
                    s.image = resize_bilinear(read_image(f), image_size, image_size);
                    s.object_id = static_cast<int>(id);
                    if (type == "good") {
                        s.label = Label::normal;
                        s.mask = Mask(image_size, image_size);
                    } else {
                        s.label = Label::defective;
                        const fs::path gt_dir = obj_dir / "ground_truth" / type;
                        const std::string prefix = f.stem().string() + "_mask";
                        fs::path mask_path;
                        for (const auto& m : sorted_files(gt_dir)) {
                            if (m.stem().string() == prefix) {
                                mask_path = m;
                                break;
                            }
                        }
                        if (mask_path.empty())
                            throw ConfigError("missing ground-truth mask for test image: " + f.string());
                        Mask mask = read_mask(mask_path);
                        if (mask.all_zero())
                            throw ConfigError("all-zero ground-truth mask is inconsistent with a defective image: " +
                                              mask_path.string());
                        s.mask = resize_nearest(mask, image_size, image_size);
                    }
                    obj.test.push_back(std::move(s));
                }
            }
        }
        ds.object_names.push_back(names[id]);
        ds.objects.push_back(std::move(obj));
    }
    return ds;
}

StepPlan parse_protocol(const std::string& spec_string, int total_objects) {
    // normalize the multiplication sign to 'x'
    std::string s;
    for (size_t i = 0; i < spec_string.size(); ++i) {
        if (i + 1 < spec_string.size() && static_cast<unsigned char>(spec_string[i]) == 0xC3 &&
            static_cast<unsigned char>(spec_string[i + 1]) == 0x97) {
            s += 'x';
            ++i;
        } else {
            s += spec_string[i];
        }
    }

    auto parse_int = [&](const std::string& tok) -> int {
        if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("bad protocol token '" + tok + "' in '" + spec_string + "'");
        long v = std::stol(tok);
        if (v < 1) throw ConfigError("protocol counts must be positive: '" + spec_string + "'");
        return static_cast<int>(v);
    };

    std::string head = s, tail;
    int repeats = 1;
    if (auto xs = s.find('x'); xs != std::string::npos) {
        if (s.find('x', xs + 1) != std::string::npos)
            throw ConfigError("bad protocol grammar: '" + spec_string + "'");
        head = s.substr(0, xs);
        repeats = parse_int(s.substr(xs + 1));
    }

    std::vector<int> sizes;
    if (auto dash = head.find('-'); dash != std::string::npos) {
        if (head.find('-', dash + 1) != std::string::npos)
            throw ConfigError("bad protocol grammar: '" + spec_string + "'");
        int a = parse_int(head.substr(0, dash));
        int b = parse_int(head.substr(dash + 1));
        sizes.push_back(a);
        for (int i = 0; i < repeats; ++i) sizes.push_back(b);
    } else {
        int a = parse_int(head);
        for (int i = 0; i < repeats; ++i) sizes.push_back(a);
    }

    int sum = 0;
    for (int v : sizes) sum += v;
    if (sum != total_objects)
        throw ConfigError("protocol '" + spec_string + "' covers " + std::to_string(sum) +
                          " objects but dataset has " + std::to_string(total_objects));

    StepPlan plan;
    plan.total_objects = total_objects;
    int next_id = 0;
    for (int v : sizes) {
        std::vector<int> step;
        for (int i = 0; i < v; ++i) step.push_back(next_id++);
        plan.steps.push_back(std::move(step));
    }
    return plan;
}

}  // namespace iuf
