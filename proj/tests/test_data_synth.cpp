#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <queue>
#include <set>

#include "iuf/common.hpp"
#include "iuf/data_synth.hpp"
#include "iuf/image_io.hpp"
#include "iuf/rng.hpp"

using namespace iuf;
namespace fs = std::filesystem;

namespace {

// 8-connected flood fill component count, test-side oracle
int component_count(const Mask& m) {
    std::vector<char> visited(m.data.size(), 0);
    int components = 0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x) || visited[y * m.width + x]) continue;
            ++components;
            std::queue<std::pair<int, int>> q;
            q.push({y, x});
            visited[y * m.width + x] = 1;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
                        if (!m.at(ny, nx) || visited[ny * m.width + nx]) continue;
                        visited[ny * m.width + nx] = 1;
                        q.push({ny, nx});
                    }
            }
        }
    return components;
}

Mask erode(const Mask& m) {
    Mask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool keep = m.at(y, x) != 0;
            for (int dy = -1; dy <= 1 && keep; ++dy)
                for (int dx = -1; dx <= 1 && keep; ++dx) {
                    int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width || !m.at(ny, nx)) keep = false;
                }
            out.at(y, x) = keep ? 1 : 0;
        }
    return out;
}

void check_sample_coherence(const Sample& s) {
    if (s.label == Label::normal) {
        CHECK(s.mask.all_zero());
    } else {
        CHECK(s.mask.area() > 0);
    }
    for (double v : s.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Image flat_image(int size, double v) {
    Image img(3, size, size);
    for (auto& p : img.data) p = v;
    return img;
}

void write_mvtec_object(const fs::path& obj, int n_train, bool with_defect, bool zero_mask = false) {
    fs::create_directories(obj / "train" / "good");
    fs::create_directories(obj / "test" / "good");
    Image img = flat_image(32, 0.4);
    for (int i = 0; i < n_train; ++i)
        write_ppm(obj / "train" / "good" / ("t" + std::to_string(i) + ".ppm"), img);
    write_ppm(obj / "test" / "good" / "g0.ppm", img);
    if (with_defect) {
        fs::create_directories(obj / "test" / "scratch");
        fs::create_directories(obj / "ground_truth" / "scratch");
        write_ppm(obj / "test" / "scratch" / "d0.ppm", flat_image(32, 0.9));
        Mask m(32, 32);
        if (!zero_mask)
            for (int k = 0; k < 6; ++k) m.at(10, 10 + k) = 1;
        write_pgm(obj / "ground_truth" / "scratch" / "d0_mask.pgm", m);
    }
}

}  // namespace

TEST_SUITE("data_synth") {
    TEST_CASE("stripes training set: all normal, values in range") {
        ObjectSpec spec = default_object_spec(0, 42, 64);
        CHECK(spec.kind == GeneratorKind::stripes);
        ObjectDataset ds = generate_dataset(spec, 10, 1, 1);
        CHECK(ds.train.size() == 10);
        for (const Sample& s : ds.train) {
            CHECK(s.label == Label::normal);
            check_sample_coherence(s);
        }
    }

    TEST_CASE("same spec and seed twice: byte-identical outputs") {
        ObjectSpec spec = default_object_spec(3, 42, 64);
        ObjectDataset a = generate_dataset(spec, 4, 2, 2);
        ObjectDataset b = generate_dataset(spec, 4, 2, 2);
        for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].image.data == b.train[i].image.data);
        for (size_t i = 0; i < a.test.size(); ++i) {
            CHECK(a.test[i].image.data == b.test[i].image.data);
            CHECK(a.test[i].mask.data == b.test[i].mask.data);
        }
    }

    TEST_CASE("blobs defective samples: mask area within bounds") {
        ObjectSpec spec = default_object_spec(2, 7, 64);
        CHECK(spec.kind == GeneratorKind::blobs);
        ObjectDataset ds = generate_dataset(spec, 1, 1, 5);
        int defective = 0;
        for (const Sample& s : ds.test) {
            if (s.label != Label::defective) continue;
            ++defective;
            CHECK(s.mask.area() >= 1);
            CHECK(s.mask.area() <= static_cast<size_t>(0.10 * 64 * 64));
        }
        CHECK(defective == 5);
    }

    TEST_CASE("every generator produces coherent test sets") {
        for (int id = 0; id < 6; ++id) {
            ObjectSpec spec = default_object_spec(id, 99, 64);
            ObjectDataset ds = generate_dataset(spec, 2, 2, 3);
            bool saw_normal = false, saw_defective = false;
            for (const Sample& s : ds.test) {
                check_sample_coherence(s);
                (s.label == Label::defective ? saw_defective : saw_normal) = true;
            }
            CHECK(saw_normal);
            CHECK(saw_defective);
        }
    }

    TEST_CASE("inject_defect: off-mask pixels bit-identical, on-mask pixels differ") {
        ObjectSpec spec = default_object_spec(1, 5, 64);
        Image base = render_object_image(spec, 0);
        for (DefectKind kind : {DefectKind::scratch, DefectKind::blotch, DefectKind::noise_patch}) {
            auto [img, mask] = inject_defect(base, 123, kind);
            auto min_area = static_cast<size_t>(std::ceil(0.002 * 64 * 64));
            CHECK(mask.area() >= min_area);
            CHECK(mask.area() <= static_cast<size_t>(0.10 * 64 * 64));
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    bool differs = false;
                    for (int c = 0; c < 3; ++c) {
                        if (img.at(c, y, x) != base.at(c, y, x)) differs = true;
                        CHECK(img.at(c, y, x) >= 0.0);
                        CHECK(img.at(c, y, x) <= 1.0);
                    }
                    if (mask.at(y, x)) CHECK(differs);
                    else CHECK_FALSE(differs);
                }
        }
    }

    TEST_CASE("scratch on constant image: connected polyline, width at most 3") {
        Image base = flat_image(64, 0.5);
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
            auto [img, mask] = inject_defect(base, seed, DefectKind::scratch);
            CHECK(component_count(mask) == 1);
            // a polyline of width <= 3 vanishes after two 3x3 erosions
            CHECK(erode(erode(mask)).area() == 0);
        }
    }

    TEST_CASE("distinct seeds give distinct masks") {
        Image base = flat_image(64, 0.5);
        int distinct = 0;
        for (int i = 0; i < 100; ++i) {
            auto [img_a, m_a] = inject_defect(base, 1000 + i, DefectKind::scratch);
            auto [img_b, m_b] = inject_defect(base, 5000 + i, DefectKind::scratch);
            if (m_a.data != m_b.data) ++distinct;
        }
        CHECK(distinct >= 99);
    }

    TEST_CASE("parse_protocol: table header cases") {
        StepPlan p1 = parse_protocol("14-1", 15);
        REQUIRE(p1.steps.size() == 2);
        CHECK(p1.steps[0].size() == 14);
        CHECK(p1.steps[0].front() == 0);
        CHECK(p1.steps[0].back() == 13);
        CHECK(p1.steps[1] == std::vector<int>{14});

        StepPlan p2 = parse_protocol("3x5", 15);
        REQUIRE(p2.steps.size() == 5);
        for (const auto& s : p2.steps) CHECK(s.size() == 3);

        StepPlan p3 = parse_protocol("10-1x5", 15);
        REQUIRE(p3.steps.size() == 6);
        CHECK(p3.steps[0].size() == 10);
        for (size_t i = 1; i < 6; ++i) CHECK(p3.steps[i] == std::vector<int>{static_cast<int>(9 + i)});

        // unicode multiplication sign accepted
        StepPlan p4 = parse_protocol("3\xC3\x97" "5", 15);
        CHECK(p4.steps.size() == 5);
    }

    TEST_CASE("parse_protocol: count mismatch names expected vs provided") {
        CHECK_THROWS_WITH_AS(parse_protocol("14-1", 10),
                             doctest::Contains("covers 15 objects but dataset has 10"), ConfigError);
        CHECK_THROWS_AS(parse_protocol("0x3", 0), ConfigError);
        CHECK_THROWS_AS(parse_protocol("a-1", 2), ConfigError);
        CHECK_THROWS_AS(parse_protocol("1-2-3", 6), ConfigError);
    }

    TEST_CASE("parse_protocol: steps are disjoint and cover N for random grammars") {
        Rng rng(31337);
        for (int trial = 0; trial < 60; ++trial) {
            int a = rng.uniform_int(1, 6), b = rng.uniform_int(1, 6), s = rng.uniform_int(1, 5);
            std::string text;
            int total = 0;
            switch (trial % 4) {
                case 0: text = std::to_string(a); total = a; break;
                case 1: text = std::to_string(a) + "-" + std::to_string(b); total = a + b; break;
                case 2: text = std::to_string(a) + "x" + std::to_string(s); total = a * s; break;
                default:
                    text = std::to_string(a) + "-" + std::to_string(b) + "x" + std::to_string(s);
                    total = a + b * s;
                    break;
            }
            StepPlan plan = parse_protocol(text, total);
            std::set<int> all;
            size_t count = 0;
            for (const auto& step : plan.steps) {
                CHECK_FALSE(step.empty());
                for (int id : step) all.insert(id);
                count += step.size();
            }
            CHECK(count == static_cast<size_t>(total));  // disjoint: no id counted twice
            CHECK(all.size() == static_cast<size_t>(total));
            CHECK(*all.begin() == 0);
            CHECK(*all.rbegin() == total - 1);
        }
    }

    TEST_CASE("mvtec layout: counting contract and ids") {
        fs::path root = fresh_dir("iuf_mvtec_ok");
        write_mvtec_object(root / "bolt", 3, true);
        write_mvtec_object(root / "washer", 3, true);
        MvtecDataset ds = load_mvtec_layout(root, 64);
        REQUIRE(ds.objects.size() == 2);
        CHECK(ds.object_names == std::vector<std::string>{"bolt", "washer"});
        size_t normals = 0;
        for (const auto& obj : ds.objects) normals += obj.train.size();
        CHECK(normals == 6);
        CHECK(ds.objects[0].train[0].object_id == 0);
        CHECK(ds.objects[1].train[0].object_id == 1);
        for (const auto& obj : ds.objects)
            for (const Sample& s : obj.train) {
                CHECK(s.image.height == 64);
                CHECK(s.label == Label::normal);
            }
    }

    TEST_CASE("mvtec layout: good test images become normal with zero mask") {
        fs::path root = fresh_dir("iuf_mvtec_good");
        write_mvtec_object(root / "bolt", 2, true);
        MvtecDataset ds = load_mvtec_layout(root, 32);
        bool saw_good = false;
        for (const Sample& s : ds.objects[0].test) {
            if (s.label == Label::normal) {
                saw_good = true;
                CHECK(s.mask.all_zero());
            } else {
                CHECK(s.mask.area() > 0);
            }
        }
        CHECK(saw_good);
    }

    TEST_CASE("mvtec layout: all-zero ground truth mask is rejected") {
        fs::path root = fresh_dir("iuf_mvtec_zero");
        write_mvtec_object(root / "bolt", 2, true, /*zero_mask=*/true);
        CHECK_THROWS_WITH_AS(load_mvtec_layout(root, 32), doctest::Contains("all-zero"), ConfigError);
    }

    TEST_CASE("mvtec layout: missing mask names the offending file") {
        fs::path root = fresh_dir("iuf_mvtec_missing");
        write_mvtec_object(root / "bolt", 2, true);
        fs::remove(root / "bolt" / "ground_truth" / "scratch" / "d0_mask.pgm");
        CHECK_THROWS_WITH_AS(load_mvtec_layout(root, 32), doctest::Contains("d0"), ConfigError);
    }

    TEST_CASE("mvtec layout: empty object directory is an error") {
        fs::path root = fresh_dir("iuf_mvtec_empty");
        fs::create_directories(root / "bolt" / "train" / "good");
        CHECK_THROWS_WITH_AS(load_mvtec_layout(root, 32), doctest::Contains("empty object"), ConfigError);
    }
}
