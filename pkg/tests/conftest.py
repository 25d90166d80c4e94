from pathlib import Path

import pytest

from chronoforge.qgen import (
    QGPromptConfig,
    TemplateQGClient,
    example_responses,
    generate_questions,
)
from chronoforge.tables import parse_tables

FIXTURES = Path(__file__).parent / "fixtures"

# Example blocks in prompt-asset order, keyed to the sample corpus pages.
EXAMPLE_ORDER = (
    "List of highest-grossing films",
    "List of NBA champions",
    "Chris Pratt",
    "Judicial Committee of the Privy Council",
    "National People's Congress",
    "List of justices of the South Carolina Supreme Court",
    "Zlatan Ibrahimović",
    "List of Denmark women's international footballers",
)


@pytest.fixture(scope="session")
def fixture_tables():
    """The eight example tables, keyed by page title."""
    return {t.page_title: t for t in parse_tables(FIXTURES / "tables")}


@pytest.fixture(scope="session")
def query_table():
    """The winning-managers table used as the generation query fixture."""
    (t,) = parse_tables(FIXTURES / "query_table")
    return t


@pytest.fixture(scope="session")
def qg_pairs(fixture_tables):
    """Generated pairs for the sample corpus, replayed from the asset."""
    cfg = QGPromptConfig.load()
    responses = example_responses(cfg.fewshot_examples)
    canned = {
        fixture_tables[title].table_id: text
        for title, text in zip(EXAMPLE_ORDER, responses)
    }
    tables = [fixture_tables[title] for title in EXAMPLE_ORDER]
    client = TemplateQGClient(tables, cfg, canned=canned)
    return [
        {
            "page_title": t.page_title,
            "table_id": t.table_id,
            "column": pair.column_name,
            "question": pair.question_text,
        }
        for t, pair in generate_questions(client, tables, cfg)
    ]
