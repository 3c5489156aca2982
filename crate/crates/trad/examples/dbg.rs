fn main() {
    let t = trad::world::run_expert_episode(10, trad::world::TaskKind::Examine);
    println!("task: {}", t.task.instruction);
    println!("success: {}", t.success);
    for s in t.steps.iter().take(70) {
        println!("{:2} OBS {}", s.index, s.observation);
        println!("   ACT {}", s.action);
    }
}
