# scripts/init_db.py
import sys

from dotenv import load_dotenv

from app.services.database import init_db
from app.settings import output_dir, results_db_url

if __name__ == "__main__":
    load_dotenv()
    out = output_dir(sys.argv[1] if len(sys.argv) > 1 else "out")
    url = results_db_url(out)
    init_db(url)
    print(f"OK: tables created at {url}")
