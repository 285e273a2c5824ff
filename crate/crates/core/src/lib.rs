//! Synthetic face-mask augmentation and masked-face verification.
//!
//! The imaging half turns 68-point facial landmarks into six mask anchors,
//! fits a projective transform from a mask template onto the face, warps
//! and composites it, and runs this over whole datasets with a
//! reproducible manifest. The recognition half provides triplet-loss
//! embedding math with online mining, a toy trainable encoder, and the
//! verification protocol: threshold calibration over folds, FAR-constrained
//! metrics, cross-dataset heatmaps and identity clustering.

pub mod augment;
pub mod embed;
pub mod error;
pub mod landmark;
pub mod maskwarp;
pub mod synth;
pub mod verifeval;

pub use error::{Error, Result};
pub use landmark::{
    estimate_tilt, extract_anchors, load_landmarks, save_landmarks, BBox, FaceAnchors,
    FaceLandmarks, Point, Tilt, TiltBin,
};
pub use maskwarp::{
    apply_color, apply_pattern, blend, estimate_transform, select_template, warp_mask,
    MaskLibrary, MaskTemplate, MaskType, Transform2D, TransformFit,
};
pub use augment::{
    mask_dataset, mask_image, AugmentationManifest, DatasetJob, FaceRecord, LandmarkProvider,
    MaskPolicy, SidecarLandmarks, SplitMix64, Status,
};
pub use embed::{
    embedding_distance, mine_triplets, sq_l2, train_toy, triplet_loss, Embedding, MiningMode,
    Sample, ToyEncoder, TrainConfig, Triplet, TripletLossParams,
};
pub use verifeval::{
    calibrate, cluster_identities, decide, evaluate, generate_pairs, heatmap,
    max_accuracy_threshold, threshold_at_far, EmbeddingSet, HeatmapGrid, Label, MetricsReport,
    ScoredPair, ThresholdCalibration, ThresholdGrid, VerificationPair,
};
