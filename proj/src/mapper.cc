// ivmap/mapper.cc

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

#include "ivmap/mapper.h"

#include <numeric>

#include "ivmap/io.h"

namespace ivmap {

// ---- Layer construction ----

Eigen::Index Layer::InputDim() const {
  switch (kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput:
      return weight.cols();
    case LayerKind::kBatchNorm:
      return gamma.size();
    case LayerKind::kRelu:
      return -1;  // pass-through
    case LayerKind::kResidualBlock:
      return inner.empty() ? -1 : inner.front().InputDim();
  }
  return -1;
}

Eigen::Index Layer::OutputDim() const {
  switch (kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput:
      return weight.rows();
    case LayerKind::kBatchNorm:
      return gamma.size();
    case LayerKind::kRelu:
      return -1;
    case LayerKind::kResidualBlock:
      return InputDim();  // identity short-cut forces in == out
  }
  return -1;
}

Layer MakeDense(Eigen::Index in_dim, Eigen::Index out_dim, bool linear_output) {
  if (in_dim < 1 || out_dim < 1)
    throw Error(err::kPrecondition, "dense layer dims must be positive");
  Layer layer;
  layer.kind = linear_output ? LayerKind::kLinearOutput : LayerKind::kDense;
  layer.weight = Matrix::Zero(out_dim, in_dim);
  layer.bias = Vector::Zero(out_dim);
  return layer;
}

Layer MakeBatchNorm(Eigen::Index dim) {
  Layer layer;
  layer.kind = LayerKind::kBatchNorm;
  layer.gamma = Vector::Ones(dim);
  layer.beta = Vector::Zero(dim);
  layer.running_mean = Vector::Zero(dim);
  layer.running_var = Vector::Ones(dim);
  return layer;
}

Layer MakeRelu() {
  Layer layer;
  layer.kind = LayerKind::kRelu;
  return layer;
}

Layer MakeResidualBlock(Eigen::Index dim, Eigen::Index hidden) {
  Layer layer;
  layer.kind = LayerKind::kResidualBlock;
  layer.inner.push_back(MakeDense(dim, hidden));
  layer.inner.push_back(MakeBatchNorm(hidden));
  layer.inner.push_back(MakeRelu());
  layer.inner.push_back(MakeDense(hidden, dim));
  layer.inner.push_back(MakeBatchNorm(dim));
  layer.inner.push_back(MakeRelu());
  return layer;
}

namespace {

std::vector<Layer> BuildEncoder(Eigen::Index in_dim, const MapperDims &dims) {
  std::vector<Layer> layers;
  layers.push_back(MakeDense(in_dim, dims.hidden));
  layers.push_back(MakeBatchNorm(dims.hidden));
  layers.push_back(MakeRelu());
  if (dims.depth == EncoderDepth::kDeep) {
    layers.push_back(MakeResidualBlock(dims.hidden, dims.hidden));
    layers.push_back(MakeResidualBlock(dims.hidden, dims.hidden));
  }
  layers.push_back(MakeDense(dims.hidden, dims.bottleneck));
  layers.push_back(MakeBatchNorm(dims.bottleneck));
  layers.push_back(MakeRelu());
  return layers;
}

std::vector<Layer> BuildDecoder(Eigen::Index out_dim, const MapperDims &dims) {
  std::vector<Layer> layers;
  layers.push_back(MakeDense(dims.bottleneck, dims.hidden));
  layers.push_back(MakeBatchNorm(dims.hidden));
  layers.push_back(MakeRelu());
  layers.push_back(MakeDense(dims.hidden, out_dim, /*linear_output=*/true));
  return layers;
}

}  // namespace

MapperNetwork BuildDnn2Network(Eigen::Index input_dim, Eigen::Index output_dim,
                               const MapperDims &dims) {
  MapperNetwork net;
  net.encoder = BuildEncoder(input_dim, dims);
  net.decoder = BuildDecoder(input_dim, dims);  // reconstructs the input
  net.head = MakeDense(dims.bottleneck, output_dim, /*linear_output=*/true);
  net.inference = InferencePath::kHead;
  net.input_dim = input_dim;
  net.output_dim = output_dim;
  return net;
}

MapperNetwork BuildAutoencoderNetwork(Eigen::Index z_dim,
                                      const MapperDims &dims) {
  MapperNetwork net;
  net.encoder = BuildEncoder(z_dim, dims);
  net.decoder = BuildDecoder(z_dim, dims);
  net.inference = InferencePath::kDecoder;
  net.input_dim = z_dim;
  net.output_dim = z_dim;
  return net;
}

MapperNetwork BuildRegressionNetwork(Eigen::Index input_dim,
                                     Eigen::Index output_dim,
                                     const MapperDims &dims) {
  MapperNetwork net;
  net.encoder = BuildEncoder(input_dim, dims);
  net.decoder = BuildDecoder(output_dim, dims);
  net.inference = InferencePath::kDecoder;
  net.input_dim = input_dim;
  net.output_dim = output_dim;
  return net;
}

MapperNetwork TrimAutoencoderToRegression(const MapperNetwork &stage1,
                                          Eigen::Index input_dim,
                                          Eigen::Index output_dim) {
  if (stage1.input_dim != input_dim + output_dim)
    throw Error(err::kDimension,
                "autoencoder input is not the concatenation of the mapper "
                "input and output");
  MapperNetwork net = stage1;
  Layer &entry = net.encoder.front();
  if (entry.kind != LayerKind::kDense)
    throw Error(err::kPrecondition, "autoencoder must start with a dense layer");
  entry.weight = Matrix(entry.weight.leftCols(input_dim));
  Layer &out = net.decoder.back();
  if (out.kind != LayerKind::kLinearOutput)
    throw Error(err::kPrecondition, "autoencoder must end with a linear layer");
  out.weight = Matrix(out.weight.middleRows(input_dim, output_dim));
  out.bias = Vector(out.bias.segment(input_dim, output_dim));
  net.head.reset();
  net.inference = InferencePath::kDecoder;
  net.input_dim = input_dim;
  net.output_dim = output_dim;
  return net;
}

// ---- Forward ----

namespace {

Matrix ForwardLayer(const Layer &layer, const Matrix &x, Mode mode,
                    LayerTrace *trace);

Matrix ForwardStack(const std::vector<Layer> &layers, const Matrix &x,
                    Mode mode, std::vector<LayerTrace> *traces) {
  Matrix current = x;
  if (traces) traces->resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i)
    current = ForwardLayer(layers[i], current, mode,
                           traces ? &(*traces)[i] : nullptr);
  return current;
}

Matrix ForwardLayer(const Layer &layer, const Matrix &x, Mode mode,
                    LayerTrace *trace) {
  switch (layer.kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput: {
      if (x.rows() != layer.weight.cols())
        throw Error(err::kDimension,
                    StrCat("dense layer expects ", layer.weight.cols(),
                           " inputs, got ", x.rows()));
      if (trace) trace->input = x;
      return (layer.weight * x).colwise() + layer.bias;
    }
    case LayerKind::kBatchNorm: {
      if (x.rows() != layer.gamma.size())
        throw Error(err::kDimension, "batch-norm width mismatch");
      if (mode == Mode::kTrain) {
        double n = static_cast<double>(x.cols());
        Vector mean = x.rowwise().mean();
        Vector var =
            (x.array().square().rowwise().mean()).matrix() -
            mean.array().square().matrix();
        var = var.cwiseMax(0.0);
        Vector inv_std = (var.array() + layer.bn_epsilon).sqrt().inverse();
        Matrix normalized =
            (x.colwise() - mean).array().colwise() * inv_std.array();
        if (trace) {
          trace->input = x;
          trace->batch_mean = mean;
          trace->batch_var = var;
          trace->normalized = normalized;
        }
        (void)n;
        return (normalized.array().colwise() * layer.gamma.array())
                   .colwise() +
               layer.beta.array();
      }
      Vector inv_std =
          (layer.running_var.array() + layer.bn_epsilon).sqrt().inverse();
      Matrix normalized =
          (x.colwise() - layer.running_mean).array().colwise() *
          inv_std.array();
      return (normalized.array().colwise() * layer.gamma.array()).colwise() +
             layer.beta.array();
    }
    case LayerKind::kRelu: {
      if (trace) trace->input = x;
      return x.cwiseMax(0.0);
    }
    case LayerKind::kResidualBlock: {
      std::vector<LayerTrace> *inner_traces = nullptr;
      if (trace) {
        trace->inner.clear();
        inner_traces = &trace->inner;
      }
      Matrix f = ForwardStack(layer.inner, x, mode, inner_traces);
      if (f.rows() != x.rows())
        throw Error(err::kDimension,
                    "residual block F path does not preserve width");
      return f + x;
    }
  }
  throw Error(err::kPrecondition, "unknown layer kind");
}

Matrix RegressionOutput(const MapperNetwork &net, const Matrix &bottleneck,
                        const Matrix &decoder_out, Mode mode,
                        LayerTrace *head_trace) {
  if (net.head)
    return ForwardLayer(*net.head, bottleneck, mode, head_trace);
  return decoder_out;
}

}  // namespace

ForwardOutputs ForwardWithTrace(const MapperNetwork &net, const Matrix &batch,
                                Mode mode, ForwardTrace *trace) {
  if (batch.rows() != net.input_dim)
    throw Error(err::kDimension,
                StrCat("network expects input dim ", net.input_dim, ", got ",
                       batch.rows()));
  if (mode == Mode::kTrain && batch.cols() < 2)
    throw Error(err::kPrecondition,
                "train-mode forward needs a batch of at least 2 (batch-norm "
                "statistics)");
  CheckFinite(batch, "network input");
  if (trace) {
    trace->mode = mode;
    trace->input = batch;
  }
  ForwardOutputs out;
  out.bottleneck = ForwardStack(net.encoder, batch, mode,
                                trace ? &trace->encoder : nullptr);
  out.reconstruction = ForwardStack(net.decoder, out.bottleneck, mode,
                                    trace ? &trace->decoder : nullptr);
  out.regression = RegressionOutput(net, out.bottleneck, out.reconstruction,
                                    mode, trace ? &trace->head : nullptr);
  return out;
}

ForwardOutputs Forward(const MapperNetwork &net, const Matrix &batch,
                       Mode mode) {
  return ForwardWithTrace(net, batch, mode, nullptr);
}

void UpdateRunningStats(MapperNetwork *net, const ForwardTrace &trace) {
  if (trace.mode != Mode::kTrain) return;
  // Walk layers and traces in lockstep.
  struct Walker {
    static void Stack(std::vector<Layer> *layers,
                      const std::vector<LayerTrace> &traces) {
      for (std::size_t i = 0; i < layers->size(); ++i) {
        Layer &layer = (*layers)[i];
        if (layer.kind == LayerKind::kBatchNorm) {
          double m = layer.bn_momentum;
          layer.running_mean =
              m * layer.running_mean + (1.0 - m) * traces[i].batch_mean;
          layer.running_var =
              m * layer.running_var + (1.0 - m) * traces[i].batch_var;
        } else if (layer.kind == LayerKind::kResidualBlock) {
          Stack(&layer.inner, traces[i].inner);
        }
      }
    }
  };
  Walker::Stack(&net->encoder, trace.encoder);
  Walker::Stack(&net->decoder, trace.decoder);
}

// ---- Flat parameters ----

namespace {

struct TensorRef {
  std::string name;
  double *data;
  Eigen::Index size;
};

void CollectLayerTensors(Layer *layer, const std::string &prefix,
                         std::vector<TensorRef> *out) {
  switch (layer->kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput:
      out->push_back({prefix + ".weight", layer->weight.data(),
                      layer->weight.size()});
      out->push_back({prefix + ".bias", layer->bias.data(), layer->bias.size()});
      break;
    case LayerKind::kBatchNorm:
      out->push_back({prefix + ".gamma", layer->gamma.data(),
                      layer->gamma.size()});
      out->push_back({prefix + ".beta", layer->beta.data(), layer->beta.size()});
      break;
    case LayerKind::kRelu:
      break;
    case LayerKind::kResidualBlock:
      for (std::size_t i = 0; i < layer->inner.size(); ++i)
        CollectLayerTensors(&layer->inner[i],
                            StrCat(prefix, ".inner.", i), out);
      break;
  }
}

std::vector<TensorRef> CollectTensors(MapperNetwork *net) {
  std::vector<TensorRef> refs;
  for (std::size_t i = 0; i < net->encoder.size(); ++i)
    CollectLayerTensors(&net->encoder[i], StrCat("encoder.", i), &refs);
  for (std::size_t i = 0; i < net->decoder.size(); ++i)
    CollectLayerTensors(&net->decoder[i], StrCat("decoder.", i), &refs);
  if (net->head) CollectLayerTensors(&*net->head, "head", &refs);
  return refs;
}

std::vector<TensorRef> CollectTensors(const MapperNetwork &net) {
  return CollectTensors(const_cast<MapperNetwork *>(&net));
}

}  // namespace

const ParamBlock &ParamLayout::Find(const std::string &name) const {
  for (const auto &block : blocks)
    if (block.name == name) return block;
  throw Error(err::kPrecondition, StrCat("no parameter block named ", name));
}

ParamLayout BuildParamLayout(const MapperNetwork &net) {
  ParamLayout layout;
  Eigen::Index offset = 0;
  for (const auto &ref : CollectTensors(net)) {
    layout.blocks.push_back({ref.name, offset, ref.size});
    offset += ref.size;
  }
  layout.total = offset;
  return layout;
}

Vector GetParameters(const MapperNetwork &net) {
  auto refs = CollectTensors(net);
  Eigen::Index total = 0;
  for (const auto &r : refs) total += r.size;
  Vector flat(total);
  Eigen::Index offset = 0;
  for (const auto &r : refs) {
    std::copy(r.data, r.data + r.size, flat.data() + offset);
    offset += r.size;
  }
  return flat;
}

void SetParameters(MapperNetwork *net, const Vector &flat) {
  auto refs = CollectTensors(net);
  Eigen::Index total = 0;
  for (const auto &r : refs) total += r.size;
  if (flat.size() != total)
    throw Error(err::kDimension,
                StrCat("parameter vector has ", flat.size(), " entries, "
                       "network has ", total));
  Eigen::Index offset = 0;
  for (auto &r : refs) {
    std::copy(flat.data() + offset, flat.data() + offset + r.size, r.data);
    offset += r.size;
  }
}

// ---- Loss and gradients ----

namespace {

void ZeroTrainable(MapperNetwork *net) {
  for (auto &ref : CollectTensors(net))
    std::fill(ref.data, ref.data + ref.size, 0.0);
}

Matrix BackwardLayer(const Layer &layer, Layer *grad, const LayerTrace &trace,
                     const Matrix &delta);

Matrix BackwardStack(const std::vector<Layer> &layers,
                     std::vector<Layer> *grads,
                     const std::vector<LayerTrace> &traces,
                     const Matrix &delta_out) {
  Matrix delta = delta_out;
  for (std::size_t i = layers.size(); i-- > 0;)
    delta = BackwardLayer(layers[i], &(*grads)[i], traces[i], delta);
  return delta;
}

Matrix BackwardLayer(const Layer &layer, Layer *grad, const LayerTrace &trace,
                     const Matrix &delta) {
  switch (layer.kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput: {
      grad->weight += delta * trace.input.transpose();
      grad->bias += delta.rowwise().sum();
      return layer.weight.transpose() * delta;
    }
    case LayerKind::kBatchNorm: {
      if (trace.batch_mean.size() == 0)
        throw Error(err::kPrecondition,
                    "batch-norm backward needs a train-mode trace");
      Vector inv_std =
          (trace.batch_var.array() + layer.bn_epsilon).sqrt().inverse();
      grad->gamma +=
          (delta.array() * trace.normalized.array()).rowwise().sum().matrix();
      grad->beta += delta.rowwise().sum();
      Matrix delta_hat = delta.array().colwise() * layer.gamma.array();
      Vector mean_delta = delta_hat.rowwise().mean();
      Vector mean_delta_norm =
          (delta_hat.array() * trace.normalized.array()).rowwise().mean();
      Matrix dx =
          ((delta_hat.colwise() - mean_delta).array() -
           trace.normalized.array().colwise() * mean_delta_norm.array())
              .colwise() *
          inv_std.array();
      return dx;
    }
    case LayerKind::kRelu: {
      return (trace.input.array() > 0.0).select(delta, 0.0);
    }
    case LayerKind::kResidualBlock: {
      Matrix inner_delta =
          BackwardStack(layer.inner, &grad->inner, trace.inner, delta);
      return inner_delta + delta;
    }
  }
  throw Error(err::kPrecondition, "unknown layer kind");
}

struct LossDeltas {
  LossValues values;
  Matrix regression_delta;      // d total / d regression output
  Matrix reconstruction_delta;  // d total / d reconstruction output
};

LossDeltas EvaluateLoss(const MapperNetwork &net, const ForwardOutputs &out,
                        const Matrix &inputs, const Matrix &targets,
                        const LossSpec &spec) {
  double n = static_cast<double>(inputs.cols());
  LossDeltas result;
  auto mse = [n](const Matrix &predicted, const Matrix &truth) {
    if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
      throw Error(err::kDimension, "loss target shape mismatch");
    return (predicted - truth).squaredNorm() / n;
  };
  switch (spec.kind) {
    case LossSpec::Kind::kRegression: {
      result.values.regression = mse(out.regression, targets);
      result.values.total = result.values.regression;
      result.regression_delta = (2.0 / n) * (out.regression - targets);
      result.reconstruction_delta =
          Matrix::Zero(out.reconstruction.rows(), out.reconstruction.cols());
      // When the decoder itself is the regression path, route the delta there.
      if (!net.head) {
        result.reconstruction_delta = result.regression_delta;
        result.regression_delta.resize(0, 0);
      }
      break;
    }
    case LossSpec::Kind::kReconstruction: {
      result.values.reconstruction = mse(out.reconstruction, inputs);
      result.values.total = result.values.reconstruction;
      result.reconstruction_delta = (2.0 / n) * (out.reconstruction - inputs);
      break;
    }
    case LossSpec::Kind::kCombined: {
      if (!net.head)
        throw Error(err::kPrecondition,
                    "combined loss needs a regression head");
      if (spec.alpha < 0.0 || spec.alpha > 1.0)
        throw Error(err::kPrecondition, "alpha must lie in [0, 1]");
      result.values.regression = mse(out.regression, targets);
      result.values.reconstruction = mse(out.reconstruction, inputs);
      result.values.total = (1.0 - spec.alpha) * result.values.regression +
                            spec.alpha * result.values.reconstruction;
      result.regression_delta =
          ((1.0 - spec.alpha) * 2.0 / n) * (out.regression - targets);
      result.reconstruction_delta =
          (spec.alpha * 2.0 / n) * (out.reconstruction - inputs);
      break;
    }
  }
  if (!std::isfinite(result.values.total))
    throw Error(err::kNonFinite, "non-finite training loss");
  return result;
}

}  // namespace

LossValues ComputeLoss(const MapperNetwork &net, const Matrix &inputs,
                       const Matrix &targets, const LossSpec &spec,
                       Mode mode) {
  ForwardOutputs out = Forward(net, inputs, mode);
  return EvaluateLoss(net, out, inputs, targets, spec).values;
}

GradientResult Gradients(const MapperNetwork &net, const Matrix &inputs,
                         const Matrix &targets, const LossSpec &spec,
                         ForwardTrace *trace_out) {
  ForwardTrace local_trace;
  ForwardTrace *trace = trace_out ? trace_out : &local_trace;
  ForwardOutputs out = ForwardWithTrace(net, inputs, Mode::kTrain, trace);
  LossDeltas deltas = EvaluateLoss(net, out, inputs, targets, spec);

  MapperNetwork grads = net;
  ZeroTrainable(&grads);

  Matrix bottleneck_delta =
      Matrix::Zero(out.bottleneck.rows(), out.bottleneck.cols());
  if (deltas.reconstruction_delta.size() > 0)
    bottleneck_delta += BackwardStack(net.decoder, &grads.decoder,
                                      trace->decoder,
                                      deltas.reconstruction_delta);
  if (net.head && deltas.regression_delta.size() > 0)
    bottleneck_delta += BackwardLayer(*net.head, &*grads.head, trace->head,
                                      deltas.regression_delta);
  BackwardStack(net.encoder, &grads.encoder, trace->encoder, bottleneck_delta);

  GradientResult result;
  result.gradients = GetParameters(grads);
  result.loss = deltas.values;
  return result;
}

GradientResult Gradients(const MapperNetwork &net, const Matrix &inputs,
                         const Matrix &targets, const LossSpec &spec) {
  return Gradients(net, inputs, targets, spec, nullptr);
}

// ---- Adam ----

double AdamState::EffectiveLearningRate() const {
  return opts.base_lr *
         std::pow(opts.decay, static_cast<double>(step) / opts.decay_steps);
}

void AdamStep(AdamState *state, Vector *params, const Vector &grads) {
  if (params->size() != state->first_moment.size() ||
      grads.size() != params->size())
    throw Error(err::kDimension, "Adam state/parameter shape mismatch");
  double lr = state->EffectiveLearningRate();
  const AdamOptions &o = state->opts;
  state->step += 1;
  double t = static_cast<double>(state->step);
  state->first_moment =
      o.beta1 * state->first_moment + (1.0 - o.beta1) * grads;
  state->second_moment = o.beta2 * state->second_moment +
                         (1.0 - o.beta2) * grads.array().square().matrix();
  double bias1 = 1.0 - std::pow(o.beta1, t);
  double bias2 = 1.0 - std::pow(o.beta2, t);
  params->array() -=
      lr * (state->first_moment.array() / bias1) /
      ((state->second_moment.array() / bias2).sqrt() + o.epsilon);
}

// ---- Initialization ----

void XavierInitDense(Layer *layer, Rng *rng) {
  if (layer->kind != LayerKind::kDense &&
      layer->kind != LayerKind::kLinearOutput)
    throw Error(err::kPrecondition, "Xavier init applies to dense layers");
  double bound = std::sqrt(
      6.0 / static_cast<double>(layer->weight.rows() + layer->weight.cols()));
  for (Eigen::Index r = 0; r < layer->weight.rows(); ++r)
    for (Eigen::Index c = 0; c < layer->weight.cols(); ++c)
      layer->weight(r, c) = rng->Uniform(-bound, bound);
  layer->bias.setZero();
}

namespace {

void XavierInitStack(std::vector<Layer> *layers, Rng *rng) {
  for (auto &layer : *layers) {
    if (layer.kind == LayerKind::kDense ||
        layer.kind == LayerKind::kLinearOutput)
      XavierInitDense(&layer, rng);
    else if (layer.kind == LayerKind::kResidualBlock)
      XavierInitStack(&layer.inner, rng);
  }
}

}  // namespace

void XavierInitNetwork(MapperNetwork *net, Rng *rng) {
  XavierInitStack(&net->encoder, rng);
  XavierInitStack(&net->decoder, rng);
  if (net->head) XavierInitDense(&*net->head, rng);
}

// ---- Training ----

void TrainNetwork(MapperNetwork *net, const TrainingPairs &pairs,
                  const LossSpec &spec, long iters, std::uint64_t seed,
                  const MapperTrainOptions &opts,
                  std::vector<CurvePoint> *curve) {
  Eigen::Index n = pairs.inputs.cols();
  if (n == 0) throw Error(err::kEmpty, "no training pairs");
  if (n == 1)
    throw Error(err::kPrecondition,
                "training needs at least 2 pairs (batch-norm statistics)");
  if (pairs.targets.cols() > 0 && pairs.targets.cols() != n)
    throw Error(err::kDimension, "inputs/targets pair count mismatch");
  Eigen::Index batch = std::min<Eigen::Index>(opts.batch_size, n);
  if (batch < 2) throw Error(err::kPrecondition, "batch size must be >= 2");

  Rng rng(seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Eigen::Index cursor = n;  // forces a shuffle before the first step

  Vector params = GetParameters(*net);
  AdamState adam(params.size(), opts.adam);

  Matrix batch_inputs(pairs.inputs.rows(), batch);
  Matrix batch_targets(pairs.targets.rows(), batch);
  for (long step = 0; step < iters; ++step) {
    if (cursor + batch > n) {
      rng.Shuffle(&order);
      cursor = 0;
    }
    for (Eigen::Index i = 0; i < batch; ++i) {
      Eigen::Index src = order[static_cast<std::size_t>(cursor + i)];
      batch_inputs.col(i) = pairs.inputs.col(src);
      if (pairs.targets.size() > 0)
        batch_targets.col(i) = pairs.targets.col(src);
    }
    cursor += batch;

    ForwardTrace trace;
    GradientResult grad =
        Gradients(*net, batch_inputs, batch_targets, spec, &trace);
    UpdateRunningStats(net, trace);
    AdamStep(&adam, &params, grad.gradients);
    SetParameters(net, params);
    if (curve)
      curve->push_back({step, grad.loss.total, grad.loss.regression,
                        grad.loss.reconstruction});
  }
}

Dnn1Result TrainDnn1(const TrainingPairs &pairs, const MapperDims &dims,
                     long pretrain_iters, long finetune_iters,
                     std::uint64_t seed, const MapperTrainOptions &opts) {
  if (pretrain_iters < 0 || finetune_iters < 0)
    throw Error(err::kPrecondition, "iteration counts must be >= 0");
  if (pairs.inputs.cols() == 0) throw Error(err::kEmpty, "no training pairs");
  Eigen::Index in_dim = pairs.inputs.rows();
  Eigen::Index out_dim = pairs.targets.rows();

  Dnn1Result result;
  MapperNetwork net;
  if (pretrain_iters == 0) {
    net = BuildRegressionNetwork(in_dim, out_dim, dims);
    Rng rng(seed);
    XavierInitNetwork(&net, &rng);
  } else {
    MapperNetwork stage1 = BuildAutoencoderNetwork(in_dim + out_dim, dims);
    Rng rng(seed);
    XavierInitNetwork(&stage1, &rng);
    TrainingPairs joint;
    joint.inputs.resize(in_dim + out_dim, pairs.inputs.cols());
    joint.inputs.topRows(in_dim) = pairs.inputs;
    joint.inputs.bottomRows(out_dim) = pairs.targets;
    TrainNetwork(&stage1, joint, {LossSpec::Kind::kReconstruction, 0.0},
                 pretrain_iters, Rng::Mix(seed, 1), opts,
                 &result.pretrain_curve);
    net = TrimAutoencoderToRegression(stage1, in_dim, out_dim);
  }
  TrainNetwork(&net, pairs, {LossSpec::Kind::kRegression, 0.0}, finetune_iters,
               Rng::Mix(seed, 2), opts, &result.finetune_curve);
  net.meta = {MapperMethod::kDnn1, 0.0, seed,
              static_cast<std::uint64_t>(pretrain_iters + finetune_iters)};
  result.network = std::move(net);
  return result;
}

Dnn2Result TrainDnn2(const TrainingPairs &pairs, const MapperDims &dims,
                     double alpha, long iters, std::uint64_t seed,
                     const MapperTrainOptions &opts) {
  if (alpha < 0.0 || alpha > 1.0)
    throw Error(err::kPrecondition, "alpha must lie in [0, 1]");
  if (pairs.inputs.cols() == 0) throw Error(err::kEmpty, "no training pairs");
  Dnn2Result result;
  MapperNetwork net =
      BuildDnn2Network(pairs.inputs.rows(), pairs.targets.rows(), dims);
  Rng rng(seed);
  XavierInitNetwork(&net, &rng);
  TrainNetwork(&net, pairs, {LossSpec::Kind::kCombined, alpha}, iters,
               Rng::Mix(seed, 1), opts, &result.curve);
  net.meta = {MapperMethod::kDnn2, alpha, seed,
              static_cast<std::uint64_t>(iters)};
  result.network = std::move(net);
  return result;
}

Vector BuildPhonemeVector(const Matrix &posteriors, const VadMask &mask,
                          double scale) {
  if (mask.NumFrames() != posteriors.rows())
    throw Error(err::kDimension, "VAD mask does not match posterior rows");
  Vector sum = Vector::Zero(posteriors.cols());
  double count = 0.0;
  for (Eigen::Index t = 0; t < posteriors.rows(); ++t) {
    if (!mask.speech[static_cast<std::size_t>(t)]) continue;
    sum += posteriors.row(t).transpose();
    count += 1.0;
  }
  if (count == 0.0)
    throw Error(err::kEmpty, "no speech frames for phoneme vector");
  return (scale / count) * sum;
}

Vector MapIvector(const MapperNetwork &net, const Vector &short_ivector,
                  const Vector *phoneme) {
  if (net.phoneme_dim > 0 && phoneme == nullptr)
    throw Error(err::kPhonemeInput,
                "network was trained with phoneme input; none supplied");
  if (net.phoneme_dim == 0 && phoneme != nullptr)
    throw Error(err::kPhonemeInput,
                "network was trained without phoneme input; phoneme vector "
                "would change the input dimension");
  Eigen::Index ivec_dim = net.input_dim - net.phoneme_dim;
  if (short_ivector.size() != ivec_dim)
    throw Error(err::kDimension,
                StrCat("short i-vector has dim ", short_ivector.size(),
                       ", network expects ", ivec_dim));
  Matrix input(net.input_dim, 1);
  input.topRows(ivec_dim) = short_ivector;
  if (phoneme) {
    if (phoneme->size() != net.phoneme_dim)
      throw Error(err::kDimension,
                  StrCat("phoneme vector has dim ", phoneme->size(),
                         ", network expects ", net.phoneme_dim));
    input.bottomRows(net.phoneme_dim) = *phoneme;
  }
  ForwardOutputs out = Forward(net, input, Mode::kInfer);
  return out.regression.col(0);
}

// ---- Serialization ----

namespace {

void WriteLayer(BinaryWriter *w, const Layer &layer) {
  w->WriteU8(static_cast<std::uint8_t>(layer.kind));
  switch (layer.kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput:
      w->WriteU32(static_cast<std::uint32_t>(layer.weight.rows()));
      w->WriteU32(static_cast<std::uint32_t>(layer.weight.cols()));
      w->WriteMatrixF64(layer.weight);
      w->WriteVectorF64(layer.bias);
      break;
    case LayerKind::kBatchNorm:
      w->WriteU32(static_cast<std::uint32_t>(layer.gamma.size()));
      w->WriteVectorF64(layer.gamma);
      w->WriteVectorF64(layer.beta);
      w->WriteVectorF64(layer.running_mean);
      w->WriteVectorF64(layer.running_var);
      w->WriteF64(layer.bn_momentum);
      w->WriteF64(layer.bn_epsilon);
      break;
    case LayerKind::kRelu:
      break;
    case LayerKind::kResidualBlock:
      w->WriteU32(static_cast<std::uint32_t>(layer.inner.size()));
      for (const auto &inner : layer.inner) WriteLayer(w, inner);
      break;
  }
}

Layer ReadLayer(BinaryReader *r) {
  Layer layer;
  std::uint8_t kind = r->ReadU8();
  if (kind > 4) throw Error(err::kFormat, "bad layer kind in network file");
  layer.kind = static_cast<LayerKind>(kind);
  switch (layer.kind) {
    case LayerKind::kDense:
    case LayerKind::kLinearOutput: {
      std::uint32_t rows = r->ReadU32();
      std::uint32_t cols = r->ReadU32();
      layer.weight = r->ReadMatrixF64(rows, cols);
      layer.bias = r->ReadVectorF64(rows);
      break;
    }
    case LayerKind::kBatchNorm: {
      std::uint32_t dim = r->ReadU32();
      layer.gamma = r->ReadVectorF64(dim);
      layer.beta = r->ReadVectorF64(dim);
      layer.running_mean = r->ReadVectorF64(dim);
      layer.running_var = r->ReadVectorF64(dim);
      layer.bn_momentum = r->ReadF64();
      layer.bn_epsilon = r->ReadF64();
      break;
    }
    case LayerKind::kRelu:
      break;
    case LayerKind::kResidualBlock: {
      std::uint32_t count = r->ReadU32();
      for (std::uint32_t i = 0; i < count; ++i)
        layer.inner.push_back(ReadLayer(r));
      break;
    }
  }
  return layer;
}

void WriteStack(BinaryWriter *w, const std::vector<Layer> &layers) {
  w->WriteU32(static_cast<std::uint32_t>(layers.size()));
  for (const auto &layer : layers) WriteLayer(w, layer);
}

std::vector<Layer> ReadStack(BinaryReader *r) {
  std::uint32_t count = r->ReadU32();
  std::vector<Layer> layers;
  layers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) layers.push_back(ReadLayer(r));
  return layers;
}

}  // namespace

void SaveMapperNetwork(const MapperNetwork &net,
                       const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("NET1");
  w.WriteU32(static_cast<std::uint32_t>(net.input_dim));
  w.WriteU32(static_cast<std::uint32_t>(net.output_dim));
  w.WriteU32(static_cast<std::uint32_t>(net.phoneme_dim));
  w.WriteF64(net.phoneme_scale);
  w.WriteU8(static_cast<std::uint8_t>(net.inference));
  w.WriteU8(static_cast<std::uint8_t>(net.meta.method));
  w.WriteF64(net.meta.alpha);
  w.WriteU64(net.meta.seed);
  w.WriteU64(net.meta.iterations);
  WriteStack(&w, net.encoder);
  WriteStack(&w, net.decoder);
  w.WriteU8(net.head ? 1 : 0);
  if (net.head) WriteLayer(&w, *net.head);
  w.Close();
}

MapperNetwork LoadMapperNetwork(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("NET1");
  MapperNetwork net;
  net.input_dim = r.ReadU32();
  net.output_dim = r.ReadU32();
  net.phoneme_dim = r.ReadU32();
  net.phoneme_scale = r.ReadF64();
  net.inference = static_cast<InferencePath>(r.ReadU8());
  net.meta.method = static_cast<MapperMethod>(r.ReadU8());
  net.meta.alpha = r.ReadF64();
  net.meta.seed = r.ReadU64();
  net.meta.iterations = r.ReadU64();
  net.encoder = ReadStack(&r);
  net.decoder = ReadStack(&r);
  if (r.ReadU8() != 0) net.head = ReadLayer(&r);
  return net;
}

void SaveTrainingCurve(const std::vector<CurvePoint> &curve,
                       const std::filesystem::path &path) {
  std::ostringstream os;
  os << "step,loss_total,loss_regression,loss_reconstruction\n";
  for (const auto &p : curve)
    os << p.step << ',' << FormatFull(p.total) << ','
       << FormatFull(p.regression) << ',' << FormatFull(p.reconstruction)
       << '\n';
  WriteTextFile(path, os.str());
}

}  // namespace ivmap
