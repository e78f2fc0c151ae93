// ivmap/mapper.h

// Copyright 2026  ivmap authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef IVMAP_MAPPER_H_
#define IVMAP_MAPPER_H_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivmap/common.h"
#include "ivmap/ubm.h"

namespace ivmap {

// A small deterministic feed-forward engine: dense layers, batch
// normalization, relu, and residual blocks (two dense+BN+relu layers whose
// output is added to the block input).  Batches are stored with one sample
// per column.

enum class LayerKind : std::uint8_t {
  kDense = 0,
  kBatchNorm = 1,
  kRelu = 2,
  kResidualBlock = 3,
  kLinearOutput = 4,  // dense with no activation after it
};

struct Layer {
  LayerKind kind = LayerKind::kDense;
  // dense / linear_output
  Matrix weight;  // out x in
  Vector bias;    // out
  // batch_norm
  Vector gamma, beta;
  Vector running_mean, running_var;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
  // residual block: the F(x) path; output is F(x) + x
  std::vector<Layer> inner;

  Eigen::Index InputDim() const;
  Eigen::Index OutputDim() const;
};

Layer MakeDense(Eigen::Index in_dim, Eigen::Index out_dim, bool linear_output = false);
Layer MakeBatchNorm(Eigen::Index dim);
Layer MakeRelu();
/// Residual block at width `dim` whose F path widens to `hidden`:
/// dense(dim->hidden)+BN+relu, dense(hidden->dim)+BN+relu, plus the
/// identity short-cut.
Layer MakeResidualBlock(Eigen::Index dim, Eigen::Index hidden);

enum class EncoderDepth : std::uint8_t { kShallow = 0, kDeep = 1 };

struct MapperDims {
  int hidden = 128;
  int bottleneck = 64;
  EncoderDepth depth = EncoderDepth::kShallow;
};

enum class InferencePath : std::uint8_t { kHead = 0, kDecoder = 1 };

enum class MapperMethod : std::uint8_t { kDnn1 = 0, kDnn2 = 1 };

struct TrainingMeta {
  MapperMethod method = MapperMethod::kDnn2;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
};

/// Encoder/decoder network with an optional linear regression head.  The
/// regression output comes from the head when present, otherwise from the
/// decoder; the reconstruction output is always the decoder output.
struct MapperNetwork {
  std::vector<Layer> encoder;
  std::vector<Layer> decoder;
  std::optional<Layer> head;
  InferencePath inference = InferencePath::kDecoder;
  Eigen::Index input_dim = 0;   // encoder input width
  Eigen::Index output_dim = 0;  // mapped i-vector width
  // Phoneme augmentation bookkeeping: when phoneme_dim > 0, inputs are
  // [i-vector; scaled phoneme vector].
  Eigen::Index phoneme_dim = 0;
  double phoneme_scale = 0.0;
  TrainingMeta meta;
};

enum class Mode { kTrain, kInfer };

struct ForwardOutputs {
  Matrix regression;      // output_dim x N (head output, or decoder output
                          // for networks without a head)
  Matrix reconstruction;  // decoder output x N
  Matrix bottleneck;      // encoder output x N
};

/// Per-layer cache produced by a train-mode forward pass and consumed by
/// backprop and by the running-statistics update.
struct LayerTrace {
  Matrix input;       // dense / relu input
  Vector batch_mean;  // batch-norm batch statistics (train mode)
  Vector batch_var;
  Matrix normalized;  // batch-norm x-hat
  std::vector<LayerTrace> inner;  // residual block
};

struct ForwardTrace {
  Mode mode = Mode::kTrain;
  Matrix input;
  std::vector<LayerTrace> encoder;
  std::vector<LayerTrace> decoder;
  LayerTrace head;
};

ForwardOutputs Forward(const MapperNetwork &net, const Matrix &batch, Mode mode);
ForwardOutputs ForwardWithTrace(const MapperNetwork &net, const Matrix &batch,
                                Mode mode, ForwardTrace *trace);

// Network builders (Xavier init is separate so weights stay reproducible).
MapperNetwork BuildDnn2Network(Eigen::Index input_dim, Eigen::Index output_dim,
                               const MapperDims &dims);
MapperNetwork BuildAutoencoderNetwork(Eigen::Index z_dim,
                                      const MapperDims &dims);
MapperNetwork BuildRegressionNetwork(Eigen::Index input_dim,
                                     Eigen::Index output_dim,
                                     const MapperDims &dims);
/// Turns a trained [input; target] autoencoder into the input->target
/// regression network: the entry layer keeps only the input columns, the
/// output layer keeps only the target rows.
MapperNetwork TrimAutoencoderToRegression(const MapperNetwork &stage1,
                                          Eigen::Index input_dim,
                                          Eigen::Index output_dim);

/// Folds the batch statistics of the traced pass into every batch-norm
/// layer's running estimates (EMA with the layer's momentum).
void UpdateRunningStats(MapperNetwork *net, const ForwardTrace &trace);

struct LossSpec {
  enum class Kind : std::uint8_t {
    kRegression,      // mean ||regression - target||^2
    kReconstruction,  // mean ||reconstruction - input||^2
    kCombined,        // (1-alpha) * regression + alpha * reconstruction
  };
  Kind kind = Kind::kRegression;
  double alpha = 0.0;
};

struct LossValues {
  double total = 0.0;
  double regression = 0.0;
  double reconstruction = 0.0;
};

/// Flat parameter access: every trainable tensor (dense weights/biases,
/// batch-norm gamma/beta) mapped into one contiguous vector.  Running
/// statistics are not trainable and are excluded.
struct ParamBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};
struct ParamLayout {
  std::vector<ParamBlock> blocks;
  Eigen::Index total = 0;
  const ParamBlock &Find(const std::string &name) const;
};
ParamLayout BuildParamLayout(const MapperNetwork &net);
Vector GetParameters(const MapperNetwork &net);
void SetParameters(MapperNetwork *net, const Vector &flat);

LossValues ComputeLoss(const MapperNetwork &net, const Matrix &inputs,
                       const Matrix &targets, const LossSpec &spec,
                       Mode mode = Mode::kTrain);

/// Exact reverse-mode gradients of the loss w.r.t. the flat parameter
/// vector (train-mode batch statistics; batch size >= 2 required).
struct GradientResult {
  Vector gradients;
  LossValues loss;
};
GradientResult Gradients(const MapperNetwork &net, const Matrix &inputs,
                         const Matrix &targets, const LossSpec &spec);
GradientResult Gradients(const MapperNetwork &net, const Matrix &inputs,
                         const Matrix &targets, const LossSpec &spec,
                         ForwardTrace *trace_out);

// ---- Optimization ----

struct AdamOptions {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay = 0.95;      // learning rate multiplier per decay_steps
  double decay_steps = 1000.0;
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step = 0;
  AdamOptions opts;

  explicit AdamState(Eigen::Index size, const AdamOptions &options)
      : first_moment(Vector::Zero(size)),
        second_moment(Vector::Zero(size)),
        opts(options) {}
  /// base_lr * decay^(step / decay_steps) for the upcoming step.
  double EffectiveLearningRate() const;
};

void AdamStep(AdamState *state, Vector *params, const Vector &grads);

/// Xavier-uniform dense init: weights on +-sqrt(6/(in+out)), zero biases.
void XavierInitDense(Layer *layer, Rng *rng);
/// Initializes every dense layer in the network (gamma=1, beta=0, running
/// stats at 0/1 are set by the Make* builders).
void XavierInitNetwork(MapperNetwork *net, Rng *rng);

// ---- Training ----

struct TrainingPairs {
  Matrix inputs;   // in_dim x N (short i-vectors, optionally with phoneme rows)
  Matrix targets;  // out_dim x N (long i-vectors)
  std::vector<std::string> short_ids;
};

struct CurvePoint {
  long step = 0;
  double total = 0.0;
  double regression = 0.0;
  double reconstruction = 0.0;
};

struct MapperTrainOptions {
  int batch_size = 256;
  AdamOptions adam;
};

/// Runs `iters` Adam steps with per-epoch shuffling (seeded); the dataset
/// is consumed in batches of `batch_size` (or all of it when smaller) and
/// any tail smaller than a full batch is deferred to the next epoch.
void TrainNetwork(MapperNetwork *net, const TrainingPairs &pairs,
                  const LossSpec &spec, long iters, std::uint64_t seed,
                  const MapperTrainOptions &opts,
                  std::vector<CurvePoint> *curve);

/// Two-stage scheme: an autoencoder is pre-trained on concatenated
/// [input; target] vectors, its weights initialize the input->target
/// regression network (first-layer columns for the input part are kept, the
/// decoder keeps only the target rows of its output layer), and the result
/// is fine-tuned on the regression loss.  pretrain_iters == 0 skips stage 1
/// entirely and trains the regression architecture from Xavier init.
struct Dnn1Result {
  MapperNetwork network;
  std::vector<CurvePoint> pretrain_curve;
  std::vector<CurvePoint> finetune_curve;
};
Dnn1Result TrainDnn1(const TrainingPairs &pairs, const MapperDims &dims,
                     long pretrain_iters, long finetune_iters,
                     std::uint64_t seed, const MapperTrainOptions &opts);

/// Single-stage scheme: encoder shared by a linear regression head and a
/// reconstruction decoder, trained jointly on
/// (1-alpha) * regression + alpha * reconstruction.
struct Dnn2Result {
  MapperNetwork network;
  std::vector<CurvePoint> curve;
};
Dnn2Result TrainDnn2(const TrainingPairs &pairs, const MapperDims &dims,
                     double alpha, long iters, std::uint64_t seed,
                     const MapperTrainOptions &opts);

/// Scaled mean posterior over speech frames (Eq.-style phoneme vector).
Vector BuildPhonemeVector(const Matrix &posteriors, const VadMask &mask,
                          double scale);

/// Infer-mode mapping of one short i-vector (with the phoneme vector when
/// and only when the network was trained with one).
Vector MapIvector(const MapperNetwork &net, const Vector &short_ivector,
                  const Vector *phoneme = nullptr);

// Network file "NET1".
void SaveMapperNetwork(const MapperNetwork &net,
                       const std::filesystem::path &path);
MapperNetwork LoadMapperNetwork(const std::filesystem::path &path);

// Training-curve log: CSV `step,loss_total,loss_regression,loss_reconstruction`.
void SaveTrainingCurve(const std::vector<CurvePoint> &curve,
                       const std::filesystem::path &path);

}  // namespace ivmap

#endif  // IVMAP_MAPPER_H_
