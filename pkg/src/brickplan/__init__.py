"""brickplan: physics-checked planning for interlocking brick assemblies.

The pipeline: validate a design (inventory, bounds, collisions), solve
its internal force distribution to score structural stability, gate a
stream of generated brick proposals against those constraints, plan a
buildable assembly order by disassembly search, and schedule the build
across two robot arms as a temporal plan graph with a simulated
execution.
"""

__version__ = "0.1.0"

from .model import (
    BASEPLATE,
    BadIndex,
    Brick,
    BrickError,
    BrickStructure,
    BrickType,
    Collision,
    ContactInterface,
    Inventory,
    InventoryError,
    MalformedLine,
    Orientation,
    OutOfBounds,
    UnknownBrickType,
    WorldConfig,
    load_structure,
    load_structure_json,
    parse_brick_line,
    save_structure,
    save_structure_json,
    serialize_brick_line,
    structure_from_dict,
    structure_to_dict,
)
from .stability import (
    ContactPoint,
    ForceModel,
    IterationLimit,
    SolverConfig,
    SolverFailure,
    StabilitySolution,
    VirtualLoad,
    build_force_model,
    solve_force_distribution,
    stability,
    stability_with_virtual_bricks,
)
from .gate import (
    Accepted,
    Finalized,
    GateConfig,
    GateTrace,
    ProposalSource,
    RandomProposalSource,
    Rejected,
    RejectReason,
    ReplaySource,
    Rollback,
    Validity,
    check_brick_validity,
    longest_stable_prefix,
    run_gate,
)
from .sequencing import (
    Allowed,
    AssemblySequence,
    AssemblyStep,
    Blocked,
    MaskConfig,
    NoSequenceFound,
    SkillKind,
    SkillParams,
    SupportSpec,
    ToolVolume,
    VerifyResult,
    action_mask,
    default_skill_library,
    operable,
    plan_sequence,
    verify_sequence,
)
from .scheduling import (
    CycleDetected,
    Edge,
    ExecConfig,
    ExecutionReport,
    InfeasiblePairing,
    MotionBlocked,
    Node,
    StationLayout,
    Task,
    TaskAssignment,
    TaskKind,
    TemporalPlanGraph,
    Unassignable,
    assign_tasks,
    build_tpg,
    expand_tasks,
    plan_motions,
    simulate,
    simulate_sequential,
)
from .ldraw import export_ldraw, export_score_heatmap
