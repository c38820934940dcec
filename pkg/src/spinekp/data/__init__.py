from .geometry import (
    alignment_transform,
    warp_stack,
    AugmentationSpec,
    GeometryTransform,
    align_spacing_and_resize,
    apply_augmentation,
    normalize_intensity,
    select_middle_slices,
)
from .io import list_exams, load_exam, save_exam, split_dataset
from .phantom import PhantomSpec, generate_phantom_exam, sample_layout
from .records import (
    DISCS,
    STRUCTURES,
    VERTEBRAE,
    BadAnnotationCount,
    CorruptSlice,
    DataError,
    DuplicateStructure,
    ExamAnnotation,
    ExamRecord,
    KeypointAnnotation,
    Label,
    MissingSpacing,
)
