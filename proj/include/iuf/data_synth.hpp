#ifndef IUF_DATA_SYNTH_HPP
#define IUF_DATA_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iuf/image.hpp"

namespace iuf {

enum class GeneratorKind { stripes, checker, blobs, gradient, rings, noise_texture };

GeneratorKind generator_kind_from_string(const std::string& name);
const char* to_string(GeneratorKind kind);

struct ObjectSpec {
    int object_id = 0;
    GeneratorKind kind = GeneratorKind::stripes;
    std::vector<double> texture_params;  // frequency, orientation, palette seed
    std::uint64_t seed = 0;
    int image_size = 64;
};

// Builds the default spec for an object id: kinds cycle through the six
// generators, texture parameters drawn from the object's derived seed.
ObjectSpec default_object_spec(int object_id, std::uint64_t data_seed, int image_size);

enum class Label { normal, defective };

struct Sample {
    Image image;
    int object_id = 0;
    Label label = Label::normal;
    Mask mask;  // all zero iff label == normal
};

struct StepPlan {
    std::vector<std::vector<int>> steps;  // ascending object ids per step
    int total_objects = 0;
};

enum class DefectKind { scratch, blotch, noise_patch };

// Renders the object's normal appearance for one image index. Pure in
// (spec, image_index): identical calls give byte-identical images.
Image render_object_image(const ObjectSpec& spec, std::uint64_t image_index);

// Overwrites a small region with a contrasting defect. Off-mask pixels are
// bit-identical to the input; every on-mask pixel differs in at least one
// channel. Mask area stays within [0.2%, 10%] of the image.
std::pair<Image, Mask> inject_defect(const Image& image, std::uint64_t rng_seed, DefectKind kind);

struct ObjectDataset {
    std::vector<Sample> train;  // all normal
    std::vector<Sample> test;   // normal + defective
};

ObjectDataset generate_dataset(const ObjectSpec& spec, int n_train, int n_test_normal,
                               int n_test_defective);

struct MvtecDataset {
    std::vector<std::string> object_names;  // index == object id
    std::vector<ObjectDataset> objects;
};

// Ingests an MVTec-style layout:
//   <object>/train/good/*, <object>/test/<defect_type>/*,
//   <object>/ground_truth/<defect_type>/<stem>_mask.*
// Object ids follow lexicographic directory order. Images are resized to
// image_size; masks are thresholded at 128 then nearest-resized.
MvtecDataset load_mvtec_layout(const std::filesystem::path& root, int image_size);

// Grammar: "a-b" (steps of a then b objects), "a×s" / "axs" (s steps of a),
// "a-b×s" (one step of a then s steps of b), plain "a" (one step).
StepPlan parse_protocol(const std::string& spec_string, int total_objects);

}  // namespace iuf

#endif
