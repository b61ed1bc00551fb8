import csv
import enum
import io
import json

SCHEMA_LINE = '#schema=seqexp-v1'


def format_value(v):
    if v is None:
        return ''
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows, columns):
    """Render dict rows as versioned CSV; floats keep full ``repr`` digits."""
    buf = io.StringIO()
    buf.write(f'{SCHEMA_LINE}\n')
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def to_json(data):
    return json.dumps(data, indent=2) + '\n'


def render(rows, columns, fmt='csv', document=None):
    if fmt == 'json':
        return to_json(rows if document is None else document)
    return to_csv(rows, columns)


def write_text(text, out):
    with open(out, 'w', encoding='utf-8', newline='') as f:
        f.write(text)


def float_grid(start, stop, step):
    count = int(round((stop - start) / step))
    return tuple(round(start + i * step, 12) for i in range(count + 1))
