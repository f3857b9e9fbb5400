//! Accuracy, mAP, latency and file-size measurement, and the synthetic
//! dataset the pipeline is exercised on.

mod bench;
mod dataset;
mod metrics;

pub use bench::{measure_latency, model_volume, LatencyStats};
pub use dataset::{
    class_name, format_annotations, generate_dataset, images_to_tensor, parse_annotations, read_dataset, read_split,
    write_dataset, write_split, Annotation, Dataset, DatasetSplits, Sample, MAX_CLASSES, MIN_IMAGE_SIZE,
};
pub use metrics::{box_predictions, classify_accuracy, iou, mean_average_precision, predict, BoundingBox, MapResult};
