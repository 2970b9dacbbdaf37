//! Checks of the pipeline rules against fixtures transcribed by hand and
//! against a straightforward re-statement of the mode rules.

use serde::Deserialize;

use ozwoz_core::pipeline::{
    classify, derive_wizard_tasks, enumerate_design_space, validate, ComponentMode, InputModality, OutputModality,
    PipelineConfig, SlotKind, SlotSettings, TaskKind, WizardTask,
};

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[derive(Deserialize)]
struct DesignRow {
    case: u8,
    text_in: String,
    asr: String,
    input_mt: String,
    dm: String,
    output_mt: String,
    tts: String,
    text_out: String,
    example: String,
}

/// Compare the built-in design space with the transcribed table.
pub fn check_design_space() -> Result<usize, String> {
    let text = std::fs::read_to_string(fixture_path("design_space.json")).map_err(|e| e.to_string())?;
    let rows: Vec<DesignRow> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let cases = enumerate_design_space();
    if rows.len() != cases.len() {
        return Err(format!("{} fixture rows, {} cases", rows.len(), cases.len()));
    }
    let x = |s: &str| s == "x";
    for (row, case) in rows.iter().zip(&cases) {
        let input = match (x(&row.text_in), x(&row.asr)) {
            (true, false) => InputModality::Text,
            (false, true) => InputModality::Asr,
            _ => return Err(format!("fixture row {} has no single input", row.case)),
        };
        let output = match (x(&row.tts), x(&row.text_out)) {
            (true, false) => OutputModality::Tts,
            (false, true) => OutputModality::Text,
            _ => return Err(format!("fixture row {} has no single output", row.case)),
        };
        let want = (row.case, input, x(&row.input_mt), x(&row.output_mt), output, row.example.as_str());
        let got = (
            case.case_number,
            case.input_modality,
            case.input_mt,
            case.output_mt,
            case.output_modality,
            case.example_label.as_str(),
        );
        if want != got || !x(&row.dm) {
            return Err(format!("row {}: expected {want:?}, got {got:?}", row.case));
        }
        // classify must invert the table.
        let cfg = config_for(input, x(&row.input_mt), x(&row.output_mt), output);
        if classify(&cfg) != Some(row.case) {
            return Err(format!("classify gave {:?} for case {}", classify(&cfg), row.case));
        }
    }
    Ok(rows.len())
}

fn config_for(input: InputModality, input_mt: bool, output_mt: bool, output: OutputModality) -> PipelineConfig {
    let on = |b: bool| if b { ComponentMode::BlackBox } else { ComponentMode::Off };
    with_languages(
        PipelineConfig::off()
            .with(SlotKind::TextIn, on(input == InputModality::Text))
            .with(SlotKind::Asr, on(input == InputModality::Asr))
            .with(SlotKind::InputMt, on(input_mt))
            .with(SlotKind::Dm, ComponentMode::Simulating)
            .with(SlotKind::OutputMt, on(output_mt))
            .with(SlotKind::Tts, on(output == OutputModality::Tts))
            .with(SlotKind::TextOut, on(output == OutputModality::Text)),
    )
}

/// MT slots need distinct languages to be valid.
pub fn with_languages(cfg: PipelineConfig) -> PipelineConfig {
    cfg.with_settings(SlotKind::InputMt, SlotSettings::default().with_languages("en", "de"))
        .with_settings(SlotKind::OutputMt, SlotSettings::default().with_languages("de", "en"))
}

fn parse_mode(cell: &str) -> Result<ComponentMode, String> {
    Ok(match cell {
        "ON" => ComponentMode::BlackBox,
        "OFF" => ComponentMode::Off,
        "Simulating" => ComponentMode::Simulating,
        "Correcting" => ComponentMode::Correcting,
        other => return Err(format!("unknown cell {other:?}")),
    })
}

#[derive(Deserialize)]
struct ComponentStateRow {
    example: String,
    text_in: String,
    asr: String,
    input_mt: String,
    dm: String,
    output_mt: String,
    tts: String,
    text_out: String,
    tasks: Vec<String>,
}

/// Every row of the component/state table validates and derives the stated tasks.
pub fn check_component_states() -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(fixture_path("component_states.json")).map_err(|e| e.to_string())?;
    let rows: Vec<ComponentStateRow> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for row in &rows {
        let cells = [&row.text_in, &row.asr, &row.input_mt, &row.dm, &row.output_mt, &row.tts, &row.text_out];
        let mut cfg = PipelineConfig::off();
        for (kind, cell) in SlotKind::ALL.iter().zip(cells) {
            cfg.set_mode(*kind, parse_mode(cell)?);
        }
        let cfg = with_languages(cfg);
        validate(&cfg).map_err(|v| format!("{}: {v:?}", row.example))?;
        let tasks: Vec<String> = derive_wizard_tasks(&cfg)
            .map_err(|v| format!("{}: {v:?}", row.example))?
            .iter()
            .map(|t| t.to_string())
            .collect();
        if tasks != row.tasks {
            return Err(format!("{}: expected {:?}, got {:?}", row.example, row.tasks, tasks));
        }
        summary.push(format!("{}={}", row.example, tasks.join(",")));
    }
    if rows.len() != 6 {
        return Err(format!("expected 6 rows, found {}", rows.len()));
    }
    Ok(summary)
}

/// The mode rules restated over the list of active slots.
fn oracle_valid(cfg: &PipelineConfig) -> bool {
    use ComponentMode::*;
    let active = |k| cfg.mode(k).is_active();
    if active(SlotKind::TextIn) == active(SlotKind::Asr) || active(SlotKind::Tts) == active(SlotKind::TextOut) {
        return false;
    }
    if matches!(cfg.mode(SlotKind::TextIn), Correcting | Simulating) {
        return false;
    }
    let chain: Vec<ComponentMode> = cfg.active().map(|s| s.mode).collect();
    for (i, &m) in chain.iter().enumerate() {
        let next = chain.get(i + 1).copied();
        let prev = i.checked_sub(1).map(|p| chain[p]);
        if m == Simulating && matches!(next, Some(Correcting)) {
            return false;
        }
        if m == Correcting && prev.is_some_and(|p| p != BlackBox) {
            return false;
        }
    }
    true
}

/// Tasks restated: runs of wizard slots, merged when a correction leads into simulation.
fn oracle_tasks(cfg: &PipelineConfig) -> Vec<(TaskKind, Vec<SlotKind>)> {
    use ComponentMode::*;
    let active: Vec<(SlotKind, ComponentMode)> = cfg.active().map(|s| (s.kind, s.mode)).collect();
    let mut tasks = Vec::new();
    let mut i = 0;
    while i < active.len() {
        let (kind, mode) = active[i];
        match mode {
            Simulating => {
                let mut span = vec![kind];
                while i + 1 < active.len() && active[i + 1].1 == Simulating {
                    i += 1;
                    span.push(active[i].0);
                }
                tasks.push((TaskKind::Simulate, span));
            }
            Correcting if i + 1 < active.len() && active[i + 1].1 == Simulating => {
                let mut span = vec![kind];
                while i + 1 < active.len() && active[i + 1].1 == Simulating {
                    i += 1;
                    span.push(active[i].0);
                }
                tasks.push((TaskKind::Simulate, span));
            }
            Correcting => tasks.push((TaskKind::Correct, vec![kind])),
            _ => {}
        }
        i += 1;
    }
    tasks
}

#[derive(Debug, Default)]
pub struct RuleSuiteReport {
    pub assignments: usize,
    pub valid: usize,
}

/// All mode assignments of the five component slots of a speech-to-speech
/// translation pipeline (plain text I/O off). Checks agreement with the
/// restated rules, task coverage, the merge property and that turning a
/// simulated slot into a working one keeps a config valid.
pub fn check_rule_suite() -> Result<RuleSuiteReport, String> {
    let kinds = [SlotKind::Asr, SlotKind::InputMt, SlotKind::Dm, SlotKind::OutputMt, SlotKind::Tts];
    let modes = ComponentMode::ALL;
    let mut report = RuleSuiteReport::default();
    for code in 0..modes.len().pow(kinds.len() as u32) {
        let mut cfg = PipelineConfig::off();
        let mut c = code;
        for k in kinds {
            cfg.set_mode(k, modes[c % 4]);
            c /= 4;
        }
        let cfg = with_languages(cfg);
        report.assignments += 1;
        let ok = validate(&cfg).is_ok();
        if ok != oracle_valid(&cfg) {
            return Err(format!("validity disagrees with the rules for {:?}", modes_of(&cfg)));
        }
        if !ok {
            if derive_wizard_tasks(&cfg).is_ok() {
                return Err(format!("tasks derived for invalid {:?}", modes_of(&cfg)));
            }
            continue;
        }
        report.valid += 1;
        let tasks = derive_wizard_tasks(&cfg).map_err(|v| format!("{v:?}"))?;
        let got: Vec<(TaskKind, Vec<SlotKind>)> = tasks.iter().map(|t| (t.kind, t.span.clone())).collect();
        if got != oracle_tasks(&cfg) {
            return Err(format!("tasks {:?} for {:?}", got, modes_of(&cfg)));
        }
        check_coverage(&cfg, &tasks)?;
        check_no_correct_then_simulate(&cfg, &tasks)?;
        for k in kinds {
            if cfg.mode(k) == ComponentMode::Simulating {
                let promoted = cfg.clone().with(k, ComponentMode::BlackBox);
                if validate(&promoted).is_err() {
                    return Err(format!("promoting {k} broke {:?}", modes_of(&cfg)));
                }
            }
        }
    }
    Ok(report)
}

fn modes_of(cfg: &PipelineConfig) -> Vec<ComponentMode> {
    cfg.slots().iter().map(|s| s.mode).collect()
}

fn check_coverage(cfg: &PipelineConfig, tasks: &[WizardTask]) -> Result<(), String> {
    let mut last_index = None;
    for t in tasks {
        if t.span.is_empty() {
            return Err("empty task".into());
        }
        let first = t.first().index();
        if last_index.is_some_and(|l| l >= first) {
            return Err("tasks overlap or are out of order".into());
        }
        last_index = Some(t.last().index());
    }
    for s in cfg.slots() {
        let wizard = matches!(s.mode, ComponentMode::Simulating | ComponentMode::Correcting);
        let covering = tasks.iter().filter(|t| t.covers(s.kind)).count();
        if covering != usize::from(wizard) {
            return Err(format!("{} covered by {covering} tasks in {:?}", s.kind, modes_of(cfg)));
        }
    }
    Ok(())
}

fn check_no_correct_then_simulate(cfg: &PipelineConfig, tasks: &[WizardTask]) -> Result<(), String> {
    for pair in tasks.windows(2) {
        if pair[0].kind == TaskKind::Correct && pair[1].kind == TaskKind::Simulate {
            let between = (pair[0].last().index() + 1..pair[1].first().index())
                .any(|i| cfg.slots()[i].mode == ComponentMode::BlackBox);
            if !between {
                return Err(format!("correct task directly followed by simulate in {:?}", modes_of(cfg)));
            }
        }
    }
    Ok(())
}
