export { EnvironmentError, FormatError, ValidationError } from "./errors.js";
export {
  MAGIC,
  ROLE_BACKGROUND,
  ROLE_OBJECT,
  canonicalJson,
  decodeFeaturePack,
  encodeFeaturePack,
  readFeaturePack,
  writeFeaturePack,
  type Box,
  type FeaturePack,
  type PackRecord,
} from "./fpk.js";
export { decodePng, type Image } from "./png.js";
export { loadDataset, parseDataset, type AnnotatedImage, type Annotation, type Dataset } from "./coco.js";
export {
  OFFLINE_IMAGE_FEATURIZERS,
  OFFLINE_TEXT_ENCODERS,
  imageFeaturizer,
  textEncoder,
  type ImageFeaturizer,
  type TextEncoder,
} from "./featurize.js";
export { BACKGROUND_IOU_LIMIT, iou, makeRng, sampleBackgroundBoxes, type Rng } from "./background.js";
export {
  extractClassTexts,
  extractInstances,
  type ExtractionJob,
  type ExtractionResult,
  type SkippedImage,
  type TextJob,
  type TextResult,
} from "./extract.js";
export { main } from "./cli.js";
